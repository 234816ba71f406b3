//! Reproducible experiment runners.
//!
//! Every runner is a pure function of its config: cells keyed by
//! (pair, P, distribution, seed) are evaluated independently (concurrently
//! when the `parallel` feature is on), then sorted deterministically before
//! any file is written, so reruns with an identical config produce
//! byte-identical CSVs. Each CSV starts with the schema comment
//! `# zkl-csv v1` and every row carries enough provenance (seed, P,
//! distribution) to regenerate it in isolation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::data::synth_blobs;
use crate::error::{Error, Result};
use crate::kernel::{fo_entk, zo_entk, KernelMatrix};
use crate::linalg;
use crate::metrics::{metric_report, MetricReport};
use crate::model::{self, MlpConfig};
use crate::optim::{run_trajectory, Algorithm, OptimConfig, TrajectoryRecord};
use crate::rng::{build_projection, PerturbationDistribution};

pub const CSV_SCHEMA_COMMENT: &str = "# zkl-csv v1";

fn map_cells<T, U, F>(cells: Vec<T>, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cells.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    cells.iter().map(&f).collect()
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(contents.as_bytes())?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_file(path, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn echo_config<C: Serialize>(cfg: &C, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_json(
        &out_dir.join("run_config.json"),
        &serde_json::to_value(cfg)?,
    )
}

// ---------------------------------------------------------------------------
// kernel-compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelCompareConfig {
    pub model: MlpConfig,
    /// Seed for the blob inputs the kernel pairs are drawn from.
    pub data_seed: u64,
    pub separation: f64,
    /// Class index pairs (observed, updating); one kernel per pair.
    pub pairs: Vec<(usize, usize)>,
    pub p_sweep: Vec<usize>,
    pub distributions: Vec<PerturbationDistribution>,
    pub seeds: Vec<u64>,
    /// Also write per-cell kernel JSON dumps.
    pub dump_kernels: bool,
}

impl Default for KernelCompareConfig {
    fn default() -> Self {
        Self {
            model: MlpConfig::new(64, vec![128], 10).with_seed(1),
            data_seed: 11,
            separation: 3.0,
            pairs: vec![(0, 1)],
            p_sweep: vec![1, 4, 16, 64, 256, 1024],
            distributions: vec![
                PerturbationDistribution::Gaussian,
                PerturbationDistribution::Rademacher,
            ],
            seeds: (0..20).map(|s| 1000 + s).collect(),
            dump_kernels: false,
        }
    }
}

impl KernelCompareConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.pairs.is_empty() || self.p_sweep.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "pairs, p_sweep and seeds must be non-empty".into(),
            ));
        }
        if self.distributions.is_empty() {
            return Err(Error::InvalidArgument("need at least one distribution".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::InvalidArgument("seeds must be distinct".into()));
        }
        for &(a, b) in &self.pairs {
            if a >= self.model.output_dim || b >= self.model.output_dim {
                return Err(Error::InvalidArgument(format!(
                    "pair ({a},{b}) out of range for V={}",
                    self.model.output_dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MedianRow {
    pub pair_id: String,
    pub perturbations: usize,
    pub distribution: String,
    pub rel_frobenius: f64,
    pub cka_error: f64,
    pub spectral_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub pair_id: String,
    pub distribution: String,
    /// Log-log slope of the median relative Frobenius error against P.
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelCompareOutput {
    pub rows: Vec<MetricReport>,
    pub medians: Vec<MedianRow>,
    pub slopes: Vec<SlopeFit>,
    #[serde(skip)]
    pub kernel_dumps: Vec<(String, serde_json::Value)>,
}

/// One FO kernel per pair, then ZO kernels and metric rows for every
/// (pair, P, distribution, seed) cell.
pub fn run_kernel_compare(cfg: &KernelCompareConfig) -> Result<KernelCompareOutput> {
    cfg.validate()?;
    let blobs = synth_blobs(
        cfg.model.output_dim,
        cfg.model.input_dim,
        1,
        cfg.separation,
        cfg.data_seed,
    )?;
    let theta = model::init_params(&cfg.model)?;

    // FO side is seed-independent: one Jacobian pair + FO kernel per pair.
    let mut fo_kernels: Vec<(String, linalg::Matrix, linalg::Matrix, KernelMatrix)> = Vec::new();
    for &(obs, upd) in &cfg.pairs {
        let pair_id = format!("{obs}-{upd}");
        let j_o = model::jacobian_logits(&theta, &cfg.model, &blobs.inputs[obs])?;
        let j_u = model::jacobian_logits(&theta, &cfg.model, &blobs.inputs[upd])?;
        let mut k_fo = fo_entk(&j_o, &j_u)?;
        k_fo.meta_mut().pair_id = pair_id.clone();
        fo_kernels.push((pair_id, j_o, j_u, k_fo));
    }

    struct Cell {
        pair_index: usize,
        p: usize,
        dist: PerturbationDistribution,
        seed: u64,
    }
    let mut cells = Vec::new();
    for (pair_index, _) in fo_kernels.iter().enumerate() {
        for &p in &cfg.p_sweep {
            for &dist in &cfg.distributions {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        pair_index,
                        p,
                        dist,
                        seed,
                    });
                }
            }
        }
    }

    let d = theta.len();
    let evaluated = map_cells(cells, |cell| {
        let (pair_id, j_o, j_u, k_fo) = &fo_kernels[cell.pair_index];
        let u = build_projection(cell.seed, 0, d, cell.p, cell.dist)?;
        let mut k_zo = zo_entk(j_o, j_u, &u)?;
        k_zo.meta_mut().pair_id = pair_id.clone();
        let report = metric_report(k_fo, &k_zo)?;
        let dump = cfg.dump_kernels.then(|| {
            (
                format!("kernel_{pair_id}_{}_{}_{}.json", cell.dist, cell.p, cell.seed),
                k_zo.to_dump_json(),
            )
        });
        Ok((report, dump))
    })?;

    let mut rows: Vec<MetricReport> = Vec::with_capacity(evaluated.len());
    let mut kernel_dumps = Vec::new();
    for (report, dump) in evaluated {
        rows.push(report);
        if let Some(d) = dump {
            kernel_dumps.push(d);
        }
    }
    if cfg.dump_kernels {
        for (pair_id, _, _, k_fo) in &fo_kernels {
            kernel_dumps.push((format!("kernel_{pair_id}_fo.json"), k_fo.to_dump_json()));
        }
    }

    rows.sort_by(|a, b| {
        (&a.pair_id, a.perturbations, &a.distribution, a.seed).cmp(&(
            &b.pair_id,
            b.perturbations,
            &b.distribution,
            b.seed,
        ))
    });

    let mut medians = Vec::new();
    for (pair_id, ..) in &fo_kernels {
        for &p in &cfg.p_sweep {
            for &dist in &cfg.distributions {
                let selected: Vec<&MetricReport> = rows
                    .iter()
                    .filter(|r| {
                        r.pair_id == *pair_id
                            && r.perturbations == p
                            && r.distribution == dist.as_str()
                    })
                    .collect();
                let mut rel: Vec<f64> = selected.iter().map(|r| r.rel_frobenius).collect();
                let mut cka: Vec<f64> = selected.iter().map(|r| r.cka_error).collect();
                let mut spec: Vec<f64> = selected.iter().map(|r| r.spectral_distance).collect();
                medians.push(MedianRow {
                    pair_id: pair_id.clone(),
                    perturbations: p,
                    distribution: dist.as_str().to_string(),
                    rel_frobenius: median(&mut rel),
                    cka_error: median(&mut cka),
                    spectral_distance: median(&mut spec),
                });
            }
        }
    }
    medians.sort_by(|a, b| {
        (&a.pair_id, a.perturbations, &a.distribution).cmp(&(
            &b.pair_id,
            b.perturbations,
            &b.distribution,
        ))
    });

    let mut slopes = Vec::new();
    if cfg.p_sweep.len() >= 2 {
        for (pair_id, ..) in &fo_kernels {
            for &dist in &cfg.distributions {
                let points: Vec<(f64, f64)> = medians
                    .iter()
                    .filter(|m| m.pair_id == *pair_id && m.distribution == dist.as_str())
                    .map(|m| (m.perturbations as f64, m.rel_frobenius))
                    .collect();
                slopes.push(SlopeFit {
                    pair_id: pair_id.clone(),
                    distribution: dist.as_str().to_string(),
                    slope: log_log_slope(&points),
                });
            }
        }
    }

    Ok(KernelCompareOutput {
        rows,
        medians,
        slopes,
        kernel_dumps,
    })
}

/// Runs kernel-compare and writes `metrics.csv` (per-seed rows followed by
/// `median` rows), `summary.json` with the slope fits, optional kernel dumps,
/// and the resolved config echo.
pub fn cmd_kernel_compare(cfg: &KernelCompareConfig, out_dir: &Path) -> Result<KernelCompareOutput> {
    let output = run_kernel_compare(cfg)?;
    echo_config(cfg, out_dir)?;

    let mut csv = String::new();
    csv.push_str(CSV_SCHEMA_COMMENT);
    csv.push('\n');
    csv.push_str(MetricReport::csv_header());
    csv.push('\n');
    for row in &output.rows {
        csv.push_str(&row.to_csv_row());
        csv.push('\n');
    }
    for m in &output.medians {
        csv.push_str(&format!(
            "{},{},{},median,{},{},{},-\n",
            m.pair_id, m.perturbations, m.distribution, m.rel_frobenius, m.cka_error,
            m.spectral_distance
        ));
    }
    write_file(&out_dir.join("metrics.csv"), &csv)?;

    write_json(
        &out_dir.join("summary.json"),
        &serde_json::json!({
            "medians": output.medians,
            "slopes": output.slopes,
        }),
    )?;

    for (name, dump) in &output.kernel_dumps {
        write_json(&out_dir.join(name), dump)?;
    }
    Ok(output)
}

// ---------------------------------------------------------------------------
// trajectory
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub model: MlpConfig,
    pub classes: usize,
    pub per_class: usize,
    pub separation: f64,
    pub data_seed: u64,
    pub eta: f64,
    pub mu: f64,
    pub steps: usize,
    pub p_sweep: Vec<usize>,
    pub distributions: Vec<PerturbationDistribution>,
    pub seeds: Vec<u64>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            model: MlpConfig::new(8, vec![16], 4).with_seed(7),
            classes: 4,
            per_class: 30,
            separation: 3.0,
            data_seed: 23,
            eta: 0.05,
            mu: 1e-3,
            steps: 200,
            p_sweep: vec![1, 10, 50, 100],
            distributions: vec![PerturbationDistribution::Gaussian],
            seeds: (0..10).map(|s| 500 + s).collect(),
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.output_dim != self.classes {
            return Err(Error::InvalidArgument(format!(
                "model output_dim {} != classes {}",
                self.model.output_dim, self.classes
            )));
        }
        if self.p_sweep.is_empty() || self.seeds.is_empty() || self.distributions.is_empty() {
            return Err(Error::InvalidArgument(
                "p_sweep, seeds and distributions must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn optim(&self, seed: u64, p: usize, dist: PerturbationDistribution) -> OptimConfig {
        OptimConfig {
            eta: self.eta,
            mu: self.mu,
            perturbations: p,
            distribution: dist,
            steps: self.steps,
            master_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryGap {
    pub perturbations: usize,
    pub distribution: String,
    pub seed: u64,
    pub diverged: bool,
    /// Mean over probes of the final-step belief L2 gap to the FO baseline.
    pub final_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryOutput {
    pub gaps: Vec<TrajectoryGap>,
    /// Median final gap per (P, distribution).
    pub median_gaps: Vec<(usize, String, f64)>,
    #[serde(skip)]
    pub csv: String,
}

fn belief_l2_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn push_trajectory_rows(
    csv: &mut String,
    record: &TrajectoryRecord,
    baseline: Option<&TrajectoryRecord>,
    p: usize,
    dist: &str,
    seed: u64,
) {
    for step in &record.steps {
        for (probe_id, beliefs) in step.probe_beliefs.iter().enumerate() {
            let gap = match baseline {
                Some(base) => base
                    .steps
                    .get(step.step)
                    .map(|b| belief_l2_gap(&b.probe_beliefs[probe_id], beliefs))
                    .unwrap_or(f64::NAN),
                None => 0.0,
            };
            for (class, belief) in beliefs.iter().enumerate() {
                let logit = step.probe_logits[probe_id][class];
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    step.step,
                    record.algorithm,
                    p,
                    dist,
                    seed,
                    step.loss,
                    probe_id,
                    class,
                    logit,
                    belief,
                    gap
                ));
            }
        }
    }
}

/// FO baseline plus one ZO run per (P, distribution, seed), all sharing the
/// per-seed sample order. Divergent runs are flagged and skipped in the gap
/// summary; the remaining cells still complete.
pub fn run_trajectory_experiment(cfg: &TrajectoryConfig) -> Result<TrajectoryOutput> {
    cfg.validate()?;
    let data = synth_blobs(
        cfg.classes,
        cfg.model.input_dim,
        cfg.per_class,
        cfg.separation,
        cfg.data_seed,
    )?;
    let probes = data.class_representatives(cfg.classes);

    struct Cell {
        seed: u64,
        p: usize,
        dist: PerturbationDistribution,
    }
    let fo_runs = map_cells(cfg.seeds.clone(), |&seed| {
        let fo_cfg = cfg.optim(seed, 1, PerturbationDistribution::Gaussian);
        run_trajectory(&cfg.model, &data, &fo_cfg, Algorithm::Fo, &probes)
    })?;

    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for &p in &cfg.p_sweep {
            for &dist in &cfg.distributions {
                cells.push(Cell { seed, p, dist });
            }
        }
    }
    let zo_runs = map_cells(cells, |cell| {
        let zo_cfg = cfg.optim(cell.seed, cell.p, cell.dist);
        let record = run_trajectory(&cfg.model, &data, &zo_cfg, Algorithm::Zo, &probes)?;
        Ok((cell.seed, cell.p, cell.dist, record))
    })?;

    let mut csv = String::new();
    csv.push_str(CSV_SCHEMA_COMMENT);
    csv.push('\n');
    csv.push_str(
        "step,algorithm,P,distribution,seed,loss,probe_id,class,logit,belief,belief_l2_gap\n",
    );
    for (seed, fo) in cfg.seeds.iter().zip(&fo_runs) {
        push_trajectory_rows(&mut csv, fo, None, 0, "none", *seed);
    }

    let mut gaps = Vec::new();
    for (seed, p, dist, record) in &zo_runs {
        let baseline = &fo_runs[cfg.seeds.iter().position(|s| s == seed).expect("seed present")];
        push_trajectory_rows(&mut csv, record, Some(baseline), *p, dist.as_str(), *seed);
        let final_gap = match (record.steps.last(), baseline.steps.last()) {
            (Some(zo_last), Some(fo_last)) if !record.diverged && !baseline.diverged => {
                let total: f64 = zo_last
                    .probe_beliefs
                    .iter()
                    .zip(&fo_last.probe_beliefs)
                    .map(|(z, f)| belief_l2_gap(f, z))
                    .sum();
                total / probes.len() as f64
            }
            _ => f64::NAN,
        };
        gaps.push(TrajectoryGap {
            perturbations: *p,
            distribution: dist.as_str().to_string(),
            seed: *seed,
            diverged: record.diverged,
            final_gap,
        });
    }
    gaps.sort_by(|a, b| {
        (a.perturbations, &a.distribution, a.seed).cmp(&(b.perturbations, &b.distribution, b.seed))
    });

    let mut median_gaps = Vec::new();
    for &p in &cfg.p_sweep {
        for &dist in &cfg.distributions {
            let mut values: Vec<f64> = gaps
                .iter()
                .filter(|g| {
                    g.perturbations == p && g.distribution == dist.as_str() && !g.diverged
                })
                .map(|g| g.final_gap)
                .collect();
            if !values.is_empty() {
                median_gaps.push((p, dist.as_str().to_string(), median(&mut values)));
            }
        }
    }

    Ok(TrajectoryOutput {
        gaps,
        median_gaps,
        csv,
    })
}

pub fn cmd_trajectory(cfg: &TrajectoryConfig, out_dir: &Path) -> Result<TrajectoryOutput> {
    let output = run_trajectory_experiment(cfg)?;
    echo_config(cfg, out_dir)?;
    write_file(&out_dir.join("trajectory.csv"), &output.csv)?;
    write_json(
        &out_dir.join("summary.json"),
        &serde_json::json!({
            "final_gaps": output.gaps,
            "median_final_gaps": output.median_gaps,
        }),
    )?;
    Ok(output)
}

// ---------------------------------------------------------------------------
// v-scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VScalingConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub init_scale: f64,
    pub init_seed: u64,
    pub v_sweep: Vec<usize>,
    pub perturbations: usize,
    pub distribution: PerturbationDistribution,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub separation: f64,
}

impl Default for VScalingConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden_dims: vec![32],
            init_scale: 1.0,
            init_seed: 3,
            v_sweep: vec![2, 10, 100, 500, 1000],
            perturbations: 50,
            distribution: PerturbationDistribution::Gaussian,
            seeds: (0..5).map(|s| 2000 + s).collect(),
            data_seed: 29,
            separation: 3.0,
        }
    }
}

impl VScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v_sweep.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "v_sweep and seeds must be non-empty".into(),
            ));
        }
        if self.v_sweep.iter().any(|&v| v < 2) {
            return Err(Error::InvalidArgument("every V must be >= 2".into()));
        }
        if self.perturbations == 0 {
            return Err(Error::InvalidArgument("perturbations must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the output-size sweep: difference norm `k = ‖ΔK‖_F`, FO norm
/// `f = ‖K‖_F`, relative error `k/f`.
#[derive(Debug, Clone, Serialize)]
pub struct VScalingRow {
    pub v: usize,
    pub seed: u64,
    pub difference_norm: f64,
    pub fo_norm: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VScalingOutput {
    pub rows: Vec<VScalingRow>,
    /// (V, median difference norm, FO norm, median relative error).
    pub medians: Vec<(usize, f64, f64, f64)>,
}

pub fn run_v_scaling(cfg: &VScalingConfig) -> Result<VScalingOutput> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for &v in &cfg.v_sweep {
        let model_cfg = MlpConfig {
            input_dim: cfg.input_dim,
            hidden_dims: cfg.hidden_dims.clone(),
            output_dim: v,
            activation: crate::model::Activation::Tanh,
            init_scale: cfg.init_scale,
            init_seed: cfg.init_seed,
        };
        let theta = model::init_params(&model_cfg)?;
        let blobs = synth_blobs(v, cfg.input_dim, 1, cfg.separation, cfg.data_seed)?;
        let j_o = model::jacobian_logits(&theta, &model_cfg, &blobs.inputs[0])?;
        let j_u = model::jacobian_logits(&theta, &model_cfg, &blobs.inputs[1])?;
        let k_fo = fo_entk(&j_o, &j_u)?;
        let fo_norm = linalg::frobenius_norm(k_fo.entries());
        let d = theta.len();

        let per_seed = map_cells(cfg.seeds.clone(), |&seed| {
            let u = build_projection(seed, 0, d, cfg.perturbations, cfg.distribution)?;
            let k_zo = zo_entk(&j_o, &j_u, &u)?;
            let diff = linalg::frobenius_norm(&k_fo.entries().sub(k_zo.entries())?);
            Ok(VScalingRow {
                v,
                seed,
                difference_norm: diff,
                fo_norm,
                rel_error: diff / fo_norm,
            })
        })?;

        let mut diffs: Vec<f64> = per_seed.iter().map(|r| r.difference_norm).collect();
        let mut rels: Vec<f64> = per_seed.iter().map(|r| r.rel_error).collect();
        medians.push((v, median(&mut diffs), fo_norm, median(&mut rels)));
        rows.extend(per_seed);
    }
    rows.sort_by(|a, b| (a.v, a.seed).cmp(&(b.v, b.seed)));
    Ok(VScalingOutput { rows, medians })
}

pub fn cmd_v_scaling(cfg: &VScalingConfig, out_dir: &Path) -> Result<VScalingOutput> {
    let output = run_v_scaling(cfg)?;
    echo_config(cfg, out_dir)?;
    let mut csv = String::new();
    csv.push_str(CSV_SCHEMA_COMMENT);
    csv.push('\n');
    csv.push_str("V,seed,difference_norm,fo_norm,rel_error\n");
    for row in &output.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.v, row.seed, row.difference_norm, row.fo_norm, row.rel_error
        ));
    }
    for (v, diff, fo, rel) in &output.medians {
        csv.push_str(&format!("{v},median,{diff},{fo},{rel}\n"));
    }
    write_file(&out_dir.join("v_scaling.csv"), &csv)?;
    write_json(
        &out_dir.join("summary.json"),
        &serde_json::json!({ "medians": output.medians }),
    )?;
    Ok(output)
}

// ---------------------------------------------------------------------------
// moment-check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentCheckConfig {
    pub dim: usize,
    pub fourth_moment_samples: usize,
    pub multi_p: Vec<usize>,
    pub multi_samples: usize,
    pub rademacher_dims: Vec<usize>,
    pub gaussian_dim: usize,
    pub gaussian_samples: usize,
    pub seed: u64,
}

impl Default for MomentCheckConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            fourth_moment_samples: 200_000,
            multi_p: vec![1, 2, 8],
            multi_samples: 100_000,
            rademacher_dims: (2..=12).collect(),
            gaussian_dim: 64,
            gaussian_samples: 100_000,
            seed: 71,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub name: String,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCheckReport {
    pub checks: Vec<MomentCheck>,
    pub all_pass: bool,
}

fn random_symmetric(dim: usize, seed: u64) -> Result<linalg::Matrix> {
    let raw = crate::rng::sample_perturbation(
        crate::rng::StreamKey::new(seed, 0, 0, crate::rng::tag::TRIAL),
        dim * dim,
        PerturbationDistribution::Gaussian,
    )?;
    let mut w = linalg::Matrix::zeros(dim, dim);
    for r in 0..dim {
        for c in r..dim {
            let v = raw[r * dim + c];
            w.set(r, c, v);
            w.set(c, r, v);
        }
    }
    Ok(w)
}

/// Runs all four moment identities and reports the observed relative errors.
pub fn run_moment_check(cfg: &MomentCheckConfig) -> Result<MomentCheckReport> {
    let mut checks = Vec::new();

    let w = random_symmetric(cfg.dim, cfg.seed)?;
    let target = bounds::gaussian_fourth_moment_target(&w);
    let estimate = bounds::gaussian_fourth_moment_oracle(&w, cfg.fourth_moment_samples, cfg.seed)?;
    let rel = linalg::frobenius_norm(&estimate.sub(&target)?) / linalg::frobenius_norm(&target);
    checks.push(MomentCheck {
        name: "gaussian_fourth_moment".into(),
        observed: rel,
        tolerance: 0.05,
        pass: rel <= 0.05,
    });

    for &p in &cfg.multi_p {
        let target = bounds::multi_perturbation_expectation_target(&w, p);
        let estimate =
            bounds::multi_perturbation_expectation_oracle(&w, p, cfg.multi_samples, cfg.seed + p as u64)?;
        let rel =
            linalg::frobenius_norm(&estimate.sub(&target)?) / linalg::frobenius_norm(&target);
        checks.push(MomentCheck {
            name: format!("multi_perturbation_expectation_p{p}"),
            observed: rel,
            tolerance: 0.05,
            pass: rel <= 0.05,
        });
    }

    let mut worst = 0.0f64;
    for &d in &cfg.rademacher_dims {
        let g: Vec<f64> = (0..d).map(|i| ((i as f64) * 0.61).cos() + 0.3).collect();
        let exact = bounds::rademacher_second_moment_exact(&g)?;
        let analytic = d as f64 * linalg::dot(&g, &g);
        worst = worst.max((exact - analytic).abs() / analytic);
    }
    checks.push(MomentCheck {
        name: "rademacher_second_moment_exact".into(),
        observed: worst,
        tolerance: 1e-12,
        pass: worst <= 1e-12,
    });

    let g: Vec<f64> = (0..cfg.gaussian_dim)
        .map(|i| ((i as f64) * 0.23).sin() + 0.1)
        .collect();
    let estimate = bounds::second_moment_estimate(
        &g,
        PerturbationDistribution::Gaussian,
        cfg.gaussian_samples,
        cfg.seed + 100,
    )?;
    let analytic = (cfg.gaussian_dim as f64 + 2.0) * linalg::dot(&g, &g);
    let rel = (estimate - analytic).abs() / analytic;
    checks.push(MomentCheck {
        name: "gaussian_second_moment".into(),
        observed: rel,
        tolerance: 0.03,
        pass: rel <= 0.03,
    });

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(MomentCheckReport { checks, all_pass })
}

pub fn cmd_moment_check(cfg: &MomentCheckConfig, out_dir: &Path) -> Result<MomentCheckReport> {
    let report = run_moment_check(cfg)?;
    echo_config(cfg, out_dir)?;
    write_json(&out_dir.join("moment_check.json"), &serde_json::to_value(&report)?)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// jl-budget
// ---------------------------------------------------------------------------

pub fn cmd_jl_budget(
    n: usize,
    epsilon: f64,
    delta: f64,
    c: f64,
    out_dir: &Path,
) -> Result<bounds::JlBudget> {
    let budget = bounds::jl_budget(n, epsilon, delta, c)?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("jl_budget.json"), &serde_json::to_value(&budget)?)?;
    Ok(budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_kernel_compare_config() -> KernelCompareConfig {
        KernelCompareConfig {
            model: MlpConfig::new(6, vec![8], 3).with_seed(2),
            data_seed: 5,
            separation: 2.0,
            pairs: vec![(0, 1)],
            p_sweep: vec![1],
            distributions: vec![PerturbationDistribution::Gaussian],
            seeds: vec![42],
            dump_kernels: false,
        }
    }

    #[test]
    fn kernel_compare_row_counts() {
        let cfg = tiny_kernel_compare_config();
        let out = run_kernel_compare(&cfg).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.medians.len(), 1);
        // A single P value cannot support a slope fit.
        assert!(out.slopes.is_empty());
        assert_eq!(out.medians[0].rel_frobenius, out.rows[0].rel_frobenius);
    }

    #[test]
    fn kernel_compare_sweep_counts_and_slope() {
        let mut cfg = tiny_kernel_compare_config();
        cfg.p_sweep = vec![1, 4, 16, 64, 256];
        cfg.distributions = vec![
            PerturbationDistribution::Gaussian,
            PerturbationDistribution::Rademacher,
        ];
        cfg.seeds = (0..20).collect();
        let out = run_kernel_compare(&cfg).unwrap();
        assert_eq!(out.rows.len(), 200);
        assert_eq!(out.medians.len(), 10);
        assert_eq!(out.slopes.len(), 2);
        for slope in &out.slopes {
            assert!(
                slope.slope < -0.2,
                "error should decay with P, slope {}",
                slope.slope
            );
        }
    }

    #[test]
    fn kernel_compare_is_deterministic() {
        let cfg = tiny_kernel_compare_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        cmd_kernel_compare(&cfg, dir_a.path()).unwrap();
        cmd_kernel_compare(&cfg, dir_b.path()).unwrap();
        let a = std::fs::read(dir_a.path().join("metrics.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("metrics.csv")).unwrap();
        assert_eq!(a, b);
        assert!(dir_a.path().join("run_config.json").exists());
    }

    #[test]
    fn kernel_compare_rejects_duplicate_seeds() {
        let mut cfg = tiny_kernel_compare_config();
        cfg.seeds = vec![1, 1];
        assert!(run_kernel_compare(&cfg).is_err());
    }

    #[test]
    fn kernel_dumps_written_when_requested() {
        let mut cfg = tiny_kernel_compare_config();
        cfg.dump_kernels = true;
        let dir = tempfile::tempdir().unwrap();
        cmd_kernel_compare(&cfg, dir.path()).unwrap();
        assert!(dir.path().join("kernel_0-1_fo.json").exists());
        assert!(dir.path().join("kernel_0-1_gaussian_1_42.json").exists());
    }

    fn tiny_trajectory_config() -> TrajectoryConfig {
        TrajectoryConfig {
            model: MlpConfig::new(4, vec![5], 2).with_seed(3),
            classes: 2,
            per_class: 6,
            separation: 3.0,
            data_seed: 9,
            eta: 0.05,
            mu: 1e-3,
            steps: 10,
            p_sweep: vec![1, 4],
            distributions: vec![PerturbationDistribution::Gaussian],
            seeds: vec![1, 2, 3],
            ..TrajectoryConfig::default()
        }
    }

    #[test]
    fn trajectory_zero_eta_gaps_are_zero() {
        let mut cfg = tiny_trajectory_config();
        cfg.eta = 0.0;
        let out = run_trajectory_experiment(&cfg).unwrap();
        for gap in &out.gaps {
            assert_eq!(gap.final_gap, 0.0);
        }
    }

    #[test]
    fn trajectory_csv_has_gap_column_and_fo_control_rows() {
        let cfg = tiny_trajectory_config();
        let out = run_trajectory_experiment(&cfg).unwrap();
        let mut lines = out.csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_SCHEMA_COMMENT);
        let header = lines.next().unwrap();
        assert!(header.ends_with("belief_l2_gap"));
        // FO rows carry algorithm=fo and a zero gap.
        let fo_row = lines.find(|l| l.contains(",fo,")).unwrap();
        assert!(fo_row.ends_with(",0"));
    }

    #[test]
    fn trajectory_experiment_is_deterministic() {
        let cfg = tiny_trajectory_config();
        let a = run_trajectory_experiment(&cfg).unwrap();
        let b = run_trajectory_experiment(&cfg).unwrap();
        assert_eq!(a.csv, b.csv);
    }

    #[test]
    fn v_scaling_rows_and_medians() {
        let cfg = VScalingConfig {
            input_dim: 6,
            hidden_dims: vec![5],
            v_sweep: vec![2, 4],
            perturbations: 8,
            seeds: vec![1, 2, 3],
            ..VScalingConfig::default()
        };
        let out = run_v_scaling(&cfg).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert_eq!(out.medians.len(), 2);
        for row in &out.rows {
            assert!((row.rel_error - row.difference_norm / row.fo_norm).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_check_default_passes() {
        let report = run_moment_check(&MomentCheckConfig::default()).unwrap();
        assert!(report.all_pass, "report: {report:?}");
    }

    #[test]
    fn moment_check_fails_with_corrupted_tolerance_inputs() {
        // Negative control: starving the estimators of samples must trip at
        // least one identity, exercising the fail path.
        let cfg = MomentCheckConfig {
            fourth_moment_samples: 20,
            multi_samples: 20,
            gaussian_samples: 20,
            ..MomentCheckConfig::default()
        };
        let report = run_moment_check(&cfg).unwrap();
        assert!(!report.all_pass);
    }

    #[test]
    fn moment_check_zero_w_is_degenerate_pass() {
        // W = 0 gives all-zero targets; the oracle returns zero exactly, and
        // the relative error convention treats 0/0 as pass-worthy 0 here, so
        // guard the division. This is exercised through the bounds API.
        let z = linalg::Matrix::zeros(3, 3);
        let est = bounds::gaussian_fourth_moment_oracle(&z, 10, 3).unwrap();
        assert!(est.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jl_budget_cmd_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let budget = cmd_jl_budget(10, 0.5, 0.01, 0.25, dir.path()).unwrap();
        assert_eq!(budget.required_p, 148);
        let text = std::fs::read_to_string(dir.path().join("jl_budget.json")).unwrap();
        assert!(text.contains("\"required_p\": 148"));
    }

    #[test]
    fn log_log_slope_recovers_power_law() {
        let points: Vec<(f64, f64)> = [1.0f64, 4.0, 16.0, 64.0]
            .iter()
            .map(|&p| (p, 3.0 * p.powf(-0.5)))
            .collect();
        assert!((log_log_slope(&points) + 0.5).abs() < 1e-12);
    }
}
