use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use crate::diffusion::{ancestral_chain, train_prior, DenoiserModel, ImageSample, NoiseSchedule, TrainLogRow, TrainOutputs};
use crate::error::{Error, Result};
use crate::fusion::{fuse_batch, write_diagnostics};
use crate::metrics::{psnr, QualityReport};
use crate::nn::{Network, NoisePredictor};
use crate::restoration::{restore_batch, train_restoration, ConditionalDenoiser};
use crate::rng::{self, derive_seed};
use crate::turbsim::{build_paired_dataset, load_clean, load_pairs, read_manifest, Bucket, DatasetSpec, ManifestRow};
use crate::{fsutil, imgio};

const GRID_IMAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Prior,
    Restore,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Prior => "prior",
            Branch::Restore => "restore",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RestoreMode {
    OneStep,
    Fused,
}

impl RestoreMode {
    pub const ALL: [RestoreMode; 2] = [RestoreMode::OneStep, RestoreMode::Fused];
}

impl fmt::Display for RestoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RestoreMode::OneStep => "one_step",
            RestoreMode::Fused => "fused",
        })
    }
}

impl FromStr for RestoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_step" | "one-step" => Ok(RestoreMode::OneStep),
            "fused" => Ok(RestoreMode::Fused),
            _ => Err(Error::invalid(format!("unknown restore mode '{s}' (expected one_step or fused)"))),
        }
    }
}

/// Where each stage reads and writes under the run's output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout { root: cfg.out_dir.clone() }
    }

    pub fn data_dir(&self, split: &str) -> PathBuf {
        self.root.join("data").join(split)
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.data_dir(split).join("manifest.csv")
    }

    pub fn branch_dir(&self, b: Branch) -> PathBuf {
        self.root.join(b.to_string())
    }

    pub fn checkpoint(&self, b: Branch) -> PathBuf {
        self.branch_dir(b).join("checkpoint.adck")
    }

    pub fn restored_dir(&self, m: RestoreMode) -> PathBuf {
        self.root.join("restored").join(m.to_string())
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// Record of one command invocation.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    pub config: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub tables: Vec<PathBuf>,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds_per_step: Option<f64>,
}

impl RunManifest {
    fn new(cfg: &RunConfig, command: &str, config: PathBuf) -> Self {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        RunManifest {
            run_id: format!("{ts}-{:08x}", derive_seed(cfg.seed, "run", 0) as u32),
            command: command.into(),
            seed: cfg.seed,
            config,
            inputs: Vec::new(),
            checkpoints: Vec::new(),
            tables: Vec::new(),
            wall_seconds: 0.0,
            seconds_per_step: None,
        }
    }

    /// Writes `manifests/<command>.toml`; refuses if any referenced path is missing.
    fn finish(mut self, layout: &Layout, start: Instant) -> Result<Self> {
        self.wall_seconds = start.elapsed().as_secs_f64();
        let all = std::iter::once(&self.config).chain(&self.inputs).chain(&self.checkpoints).chain(&self.tables);
        if let Some(missing) = all.into_iter().find(|p| !p.exists()) {
            return Err(Error::MissingFile(missing.clone()));
        }
        let text = toml::to_string(&self).map_err(|e| Error::Config(e.to_string()))?;
        fsutil::write_atomic_str(&layout.root.join("manifests").join(format!("{}.toml", self.command)), &text)?;
        Ok(self)
    }
}

fn freeze_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let p = dir.join("config.toml");
    fsutil::write_atomic_str(&p, &cfg.to_toml())?;
    Ok(p)
}

/// Scene seeds of the train and eval splits, derived from the global seed.
pub fn split_seeds(cfg: &RunConfig) -> (Vec<u64>, Vec<u64>) {
    let train = (0..cfg.data.train_scenes as u64).map(|k| derive_seed(cfg.seed, "data-train", k)).collect();
    let eval = (0..cfg.data.eval_scenes as u64).map(|k| derive_seed(cfg.seed, "data-eval", k)).collect();
    (train, eval)
}

pub fn check_disjoint(train: &[u64], eval: &[u64]) -> Result<()> {
    let t: BTreeSet<_> = train.iter().collect();
    if let Some(s) = eval.iter().find(|s| t.contains(s)) {
        return Err(Error::invalid(format!("scene seed {s} appears in both train and eval splits")));
    }
    Ok(())
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let layout = Layout::new(cfg);
    let (train, eval) = split_seeds(cfg);
    check_disjoint(&train, &eval)?;
    let dir = layout.root.join("data");
    let frozen = freeze_config(cfg, &dir)?;
    let mut m = RunManifest::new(cfg, "gen-data", frozen);
    for (split, seeds) in [("train", train), ("eval", eval)] {
        let spec = DatasetSpec {
            size: cfg.data.size,
            channels: cfg.data.channels,
            scene_seeds: seeds,
            cn2_grid: cfg.data.cn2_grid.clone(),
            degrade_seed: derive_seed(cfg.seed, "data-degrade", u64::from(split == "eval")),
        };
        let rows = build_paired_dataset(&spec, &layout.data_dir(split))?;
        log::info!("{split}: {} pairs written to {}", rows.len(), layout.data_dir(split).display());
        m.tables.push(layout.manifest(split));
    }
    m.finish(&layout, start)
}

fn read_split(layout: &Layout, split: &str) -> Result<Vec<ManifestRow>> {
    let p = layout.manifest(split);
    let rows = read_manifest(&p)?;
    if rows.is_empty() {
        return Err(Error::invalid(format!("manifest {} has no rows", p.display())));
    }
    Ok(rows)
}

fn sample_grid(net: &Network, schedule: &NoiseSchedule, cond: Option<&[ImageSample]>, dims: [usize; 3], seed: u64) -> Result<Vec<ImageSample>> {
    let n = cond.map_or(GRID_IMAGES, |c| c.len());
    let mut rngs: Vec<_> = (0..n as u64).map(|k| rng::substream(seed, "grid", k)).collect();
    let cond_t = cond.map(|c| crate::tensorgrad::Tensor::stack(&c.iter().map(|x| x.to_model()).collect::<Vec<_>>())).transpose()?;
    let x = ancestral_chain(net, schedule, &[n, dims[0], dims[1], dims[2]], &mut rngs, cond_t.as_ref(), Some(1.0))?;
    x.unstack().iter().map(|t| ImageSample::from_model(t, "grid", seed)).collect()
}

pub fn cmd_train(branch: Branch, cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let layout = Layout::new(cfg);
    let rows = read_split(&layout, "train")?;
    let data_root = layout.data_dir("train");
    let dir = layout.branch_dir(branch);
    let frozen = freeze_config(cfg, &dir)?;
    let mut m = RunManifest::new(cfg, &format!("train-{branch}"), frozen);
    m.inputs.push(layout.manifest("train"));
    let section = match branch {
        Branch::Prior => &cfg.train_prior,
        Branch::Restore => &cfg.train_restore,
    };
    let tcfg = section.train_config(derive_seed(cfg.seed, &format!("train-{branch}"), 0));
    let outputs = TrainOutputs { checkpoint: Some(layout.checkpoint(branch)), log_csv: Some(dir.join("loss.csv")) };
    let schedule = cfg.model.schedule()?;
    let every = section.sample_every;
    let grid_seed = derive_seed(cfg.seed, "grid", 0);
    let report = |row: &TrainLogRow| {
        if row.step % 100 == 0 || row.step + 1 == tcfg.steps {
            log::info!("{branch} step {} loss {:.5} lr {:.3e}", row.step, row.loss, row.lr);
        }
    };
    let dims = [cfg.data.channels, cfg.data.size, cfg.data.size];
    let grid_path = |step: usize| dir.join("samples").join(format!("step_{:06}.png", step + 1));
    match branch {
        Branch::Prior => {
            let clean = load_clean(&rows, &data_root)?;
            train_prior(&clean, &cfg.model, &tcfg, &outputs, |row, net| {
                report(row);
                if every > 0 && (row.step + 1) % every == 0 {
                    let imgs = sample_grid(net, &schedule, None, dims, grid_seed)?;
                    imgio::save_grid(&grid_path(row.step), &imgs, 2)?;
                }
                Ok(())
            })?;
        }
        Branch::Restore => {
            let pairs = load_pairs(&rows, &data_root)?;
            let probe: Vec<ImageSample> = pairs.iter().rev().step_by(pairs.len().div_ceil(GRID_IMAGES).max(1)).take(GRID_IMAGES).map(|p| p.degraded.clone()).collect();
            train_restoration(&pairs, &cfg.model, &tcfg, &outputs, |row, net| {
                report(row);
                if every > 0 && (row.step + 1) % every == 0 {
                    let mut imgs = probe.clone();
                    imgs.extend(sample_grid(net, &schedule, Some(&probe), dims, grid_seed)?);
                    imgio::save_grid(&grid_path(row.step), &imgs, probe.len())?;
                }
                Ok(())
            })?;
        }
    }
    m.checkpoints.push(layout.checkpoint(branch));
    m.tables.push(dir.join("loss.csv"));
    m.seconds_per_step = Some(start.elapsed().as_secs_f64() / tcfg.steps as f64);
    m.finish(&layout, start)
}

fn restored_name(row: &ManifestRow) -> String {
    Path::new(&row.degraded_path).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_models(cfg: &RunConfig) -> Result<(DenoiserModel, ConditionalDenoiser)> {
    let layout = Layout::new(cfg);
    let (prior, branch) = DenoiserModel::load(&layout.checkpoint(Branch::Prior))?;
    if branch != "prior" {
        return Err(Error::Checkpoint(format!("prior checkpoint holds a '{branch}' model")));
    }
    let restorer = ConditionalDenoiser::load(&layout.checkpoint(Branch::Restore))?;
    crate::fusion::check_schedules(&prior.schedule, &restorer.inner.schedule)?;
    if prior.net.in_channels() != restorer.channels() {
        return Err(Error::invalid("prior and restorer disagree on channel count"));
    }
    Ok((prior, restorer))
}

pub fn cmd_restore(mode: RestoreMode, cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let layout = Layout::new(cfg);
    let rows = read_split(&layout, "eval")?;
    let data_root = layout.data_dir("eval");
    let (prior, restorer) = load_models(cfg)?;
    let out = layout.restored_dir(mode);
    let frozen = freeze_config(cfg, &out)?;
    let mut m = RunManifest::new(cfg, &format!("restore-{mode}"), frozen);
    m.inputs.push(layout.manifest("eval"));
    m.checkpoints.extend([layout.checkpoint(Branch::Prior), layout.checkpoint(Branch::Restore)]);
    let pairs = load_pairs(&rows, &data_root)?;
    let fusion = cfg.fusion_config();
    let seeds: Vec<u64> = (0..rows.len() as u64)
        .map(|i| match mode {
            RestoreMode::OneStep => derive_seed(cfg.seed, "restore-item", i),
            RestoreMode::Fused => derive_seed(fusion.seed, "fuse-item", i),
        })
        .collect();
    let mut report = Vec::new();
    writeln!(report, "{}", QualityReport::csv_header()).unwrap();
    for (chunk, idx) in (0..rows.len()).collect::<Vec<_>>().chunks(cfg.eval.batch_size).enumerate() {
        let xs: Vec<ImageSample> = idx.iter().map(|&i| pairs[i].degraded.clone()).collect();
        let s: Vec<u64> = idx.iter().map(|&i| seeds[i]).collect();
        let restored = match mode {
            RestoreMode::OneStep => restore_batch(&xs, &restorer, &s)?,
            RestoreMode::Fused => {
                let (imgs, diags) = fuse_batch(&xs, &prior, &restorer, &fusion, &s)?;
                if cfg.fuse.diagnostics {
                    write_diagnostics(&out.join(format!("diagnostics_{chunk:03}.csv")), &diags)?;
                }
                imgs
            }
        };
        for (&i, img) in idx.iter().zip(restored) {
            let name = restored_name(&rows[i]);
            let path = out.join(&name);
            imgio::save(&path, &img)?;
            let mut saved = imgio::quantized(&img);
            saved.source_id = name;
            let q = QualityReport::assess(&saved, Some(&pairs[i].clean))?;
            writeln!(report, "{}", q.csv_row()).unwrap();
        }
        log::info!("{mode}: {}/{} images", idx.last().map_or(0, |l| l + 1), rows.len());
    }
    let report_path = out.join("report.csv");
    fsutil::write_atomic(&report_path, &report)?;
    m.tables.push(report_path);
    m.finish(&layout, start)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetailRow {
    pub method: String,
    pub image: String,
    pub cn2: f64,
    pub bucket: Bucket,
    pub psnr: f64,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    /// Per bucket (low, medium, high): mean PSNR and mean severity; `None` for an empty bucket.
    pub cells: [Option<(f64, f64)>; 3],
}

#[derive(Clone, Debug)]
pub struct EvalTables {
    pub summary: Vec<SummaryRow>,
    pub detail: Vec<DetailRow>,
    pub summary_path: PathBuf,
    pub detail_path: PathBuf,
}

pub fn summarize(detail: &[DetailRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for d in detail {
        if !methods.contains(&d.method.as_str()) {
            methods.push(&d.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let cells = Bucket::ALL.map(|b| {
                let v: Vec<&DetailRow> = detail.iter().filter(|d| d.method == method && d.bucket == b).collect();
                (!v.is_empty()).then(|| {
                    let n = v.len() as f64;
                    (v.iter().map(|d| d.psnr).sum::<f64>() / n, v.iter().map(|d| d.severity).sum::<f64>() / n)
                })
            });
            SummaryRow { method: method.to_string(), cells }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("method");
    for b in Bucket::ALL {
        s.push_str(&format!(",{b}_psnr,{b}_severity"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&r.method);
        for c in &r.cells {
            match c {
                Some((p, v)) => s.push_str(&format!(",{p},{v}")),
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn detail_csv(rows: &[DetailRow]) -> String {
    let mut s = String::from("method,image,cn2,bucket,psnr,severity\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.method, r.image, crate::turbsim::format_cn2(r.cn2), r.bucket, r.psnr, r.severity));
    }
    s
}

/// Bucketed PSNR / severity table for the degraded inputs and every restored mode present.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalTables> {
    let start = Instant::now();
    let layout = Layout::new(cfg);
    let rows = read_split(&layout, "eval")?;
    let data_root = layout.data_dir("eval");
    let out = layout.eval_dir();
    let frozen = freeze_config(cfg, &out)?;
    let mut m = RunManifest::new(cfg, "eval", frozen);
    m.inputs.push(layout.manifest("eval"));

    let modes: Vec<RestoreMode> = RestoreMode::ALL.into_iter().filter(|&md| layout.restored_dir(md).exists()).collect();
    if modes.is_empty() {
        return Err(Error::MissingFile(layout.root.join("restored")));
    }
    let missing: Vec<String> = modes
        .iter()
        .flat_map(|&md| { let layout = &layout; rows.iter().map(move |r| layout.restored_dir(md).join(restored_name(r))) })
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("missing restored images:\n  {}", missing.join("\n  "))));
    }

    let mut jobs: Vec<(String, usize, PathBuf)> = rows.iter().enumerate().map(|(i, r)| ("degraded".to_string(), i, data_root.join(&r.degraded_path))).collect();
    for &md in &modes {
        jobs.extend(rows.iter().enumerate().map(|(i, r)| (md.to_string(), i, layout.restored_dir(md).join(restored_name(r)))));
    }
    let cleans: BTreeMap<&str, ImageSample> = rows
        .iter()
        .map(|r| r.clean_path.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|p| Ok((p, imgio::load(&data_root.join(p))?)))
        .collect::<Result<_>>()?;
    let detail: Vec<DetailRow> = jobs
        .par_iter()
        .map(|(method, i, path)| {
            let r = &rows[*i];
            let img = imgio::load(path)?;
            let (severity, _, _) = crate::metrics::severity(&img)?;
            Ok(DetailRow {
                method: method.clone(),
                image: restored_name(r),
                cn2: r.cn2,
                bucket: r.bucket,
                psnr: psnr(&cleans[r.clean_path.as_str()], &img)?,
                severity,
            })
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&detail);
    let summary_path = out.join("summary.csv");
    let detail_path = out.join("detail.csv");
    fsutil::write_atomic_str(&detail_path, &detail_csv(&detail))?;
    fsutil::write_atomic_str(&summary_path, &summary_csv(&summary))?;
    m.tables.extend([summary_path.clone(), detail_path.clone()]);
    for md in modes {
        m.inputs.push(layout.restored_dir(md).join("report.csv"));
    }
    m.inputs.retain(|p| p.exists());
    m.finish(&layout, start)?;
    Ok(EvalTables { summary, detail, summary_path, detail_path })
}

/// Parses a detail CSV back into rows.
pub fn read_detail(path: &Path) -> Result<Vec<DetailRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::invalid(format!("detail csv column {i}: {e}")));
        out.push(DetailRow {
            method: rec[0].to_string(),
            image: rec[1].to_string(),
            cn2: num(2)?,
            bucket: rec[3].parse()?,
            psnr: num(4)?,
            severity: num(5)?,
        });
    }
    Ok(out)
}
