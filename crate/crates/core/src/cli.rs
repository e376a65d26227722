//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::finalize::{build_tracks, extract_line_map, global_merge, local_merge, LineMap3D};
use crate::io::{self, PipelineConfig};
use crate::metrics::{m1_metrics, m2_metrics, GroundTruth, MetricsReport};
use crate::optim::optimize_scene;
use crate::synth::{synthesize, DegradationSpec};
use crate::Vec3;

#[derive(Parser, Debug)]
#[command(name = "lineplane", version, about = "3D line mapping with planar primitives")]
pub struct Cli {
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// key=value config file; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::read(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.optim.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MergeMode {
    Local,
    Global,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic box scene directory.
    Synth {
        #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["X", "Y", "Z"], default_values_t = [1.0, 1.0, 1.0])]
        dims: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        cams: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.0)]
        spurious: f64,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 0.0)]
        fragment: f64,
        #[arg(long, default_value_t = 0.0)]
        depth_noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize planes against a scene; writes the plane set and loss log.
    Optimize {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Extract the line map with tracks from optimized planes.
    Extract {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        planes: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge a line map.
    Merge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: MergeMode,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a line map (or `.obj` lines) against GT lines.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// M2 distance thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = [0.005, 0.01, 0.05])]
        m2: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Viewer geometry from a plane set or a line map.
    Export {
        #[arg(long, conflicts_with = "lines", required_unless_present = "lines")]
        planes: Option<PathBuf>,
        #[arg(long)]
        lines: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_lines_any(path: &Path) -> Result<LineMap3D> {
    if path.extension().is_some_and(|e| e == "obj") {
        Ok(LineMap3D { lines: io::read_obj_lines(path)? })
    } else {
        io::read_line_map(path)
    }
}

pub fn labels_path(root: &Path, id: usize) -> PathBuf {
    root.join(format!("labels_{id:04}.txt"))
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match cli.command {
        Command::Synth { dims, cams, seed, jitter, spurious, dropout, fragment, depth_noise, out } => {
            let spec = DegradationSpec {
                jitter_sigma: jitter,
                spurious_rate: spurious,
                dropout_prob: dropout,
                fragment_prob: fragment,
                depth_noise_sigma: depth_noise,
                seed,
                ..DegradationSpec::default()
            };
            let (scene, views, dets) = synthesize(Vec3::new(dims[0], dims[1], dims[2]), cams, &spec)?;
            io::write_scene(&out, &views)?;
            write(&io::gt_lines_path(&out), &io::lines_to_obj(&scene.lines))?;
            for (id, d) in dets.iter().enumerate() {
                let s: String = d.iter().map(|x| x.label.map_or("-".to_string(), |l| l.to_string()) + "\n").collect();
                write(&labels_path(&out, id), &s)?;
            }
        }
        Command::Optimize { scene, cfg, out, log } => {
            let cfg = cfg.load()?;
            let views = io::read_scene(&scene)?;
            let res = optimize_scene(&views, &cfg.optim)?;
            io::write_planes(&out, &res.planes)?;
            if let Some(log) = log {
                write(&log, &io::loss_log_to_text(&res.history))?;
            }
        }
        Command::Extract { scene, planes, cfg, out } => {
            let cfg = cfg.load()?;
            let views = io::read_scene(&scene)?;
            let planes = io::read_planes(&planes)?;
            let map = extract_line_map(&planes, &views, &cfg.thresholds, cfg.extract_lambda);
            io::write_line_map(&out, &build_tracks(&map, &views, &cfg.thresholds))?;
        }
        Command::Merge { input, mode, cfg, out } => {
            let cfg = cfg.load()?;
            let map = read_lines_any(&input)?;
            let merged = match mode {
                MergeMode::Local => local_merge(&map),
                MergeMode::Global => global_merge(&map, cfg.thresholds.tau_dbscan),
            };
            io::write_line_map(&out, &merged)?;
        }
        Command::Eval { pred, gt, cfg, m2, out } => {
            let cfg = cfg.load()?;
            let pred = read_lines_any(&pred)?;
            let gt = GroundTruth::from_lines(&io::read_obj_lines(&gt)?, cfg.gt_samples_per_line)?;
            let report = MetricsReport {
                m1: m1_metrics(&pred.lines, &gt, cfg.eval_tau, true)?,
                m2: Some(m2_metrics(&pred.lines, &gt, &m2, true)?),
                units: "scene".into(),
            };
            match out {
                Some(p) => write(&p, &report.to_text())?,
                None => print!("{}", report.to_text()),
            }
        }
        Command::Export { planes, lines, out } => {
            let text = match (planes, lines) {
                (Some(p), _) => io::planes_to_obj(&io::read_planes(&p)?),
                (None, Some(l)) => io::lines_to_obj(&read_lines_any(&l)?.lines),
                (None, None) => return Err(Error::Config("export needs --planes or --lines".into())),
            };
            write(&out, &text)?;
        }
    }
    Ok(())
}

/// One machine-parsable line: `<CODE> <message>`.
pub fn error_line(e: &Error) -> String {
    format!("{} {}", e.code(), e.to_string().replace('\n', " "))
}
