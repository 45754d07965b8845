use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use icmvc::dataio::{self, Dataset, LoadOptions, ObservationMask, SynthSpec, ViewSet};
use icmvc::metrics::{self, MetricsReport};
use icmvc::trainer::{self, Ablation, AblationRow, TrainConfig};
use icmvc::Labels;
use serde_json::{json, Value};

use crate::args::{AblateArgs, EvalArgs, GenArgs, RunArgs, SeedArgs, SweepArgs, TrainArgs};
use crate::{exit_code, manifest, pool, Failure, EXIT_DATA, EXIT_DIVERGENCE};

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    Ok(dataio::write_atomic(path, text.as_bytes())?)
}

/// Built-in defaults, overlaid by the config file, overlaid by flags.
pub fn resolve_config(args: &TrainArgs) -> Result<(TrainConfig, Option<Value>), Failure> {
    let mut config = TrainConfig::default();
    let mut file_value = None;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("config {}: {e}", path.display())))?;
        let Value::Object(fields) = &value else {
            return Err(Failure::validation("config file must be a JSON object"));
        };
        let known = serde_json::to_value(TrainConfig::default()).expect("config serializes");
        if let Some(unknown) = fields.keys().find(|k| known.get(k.as_str()).is_none()) {
            return Err(Failure::validation(format!("unknown config key `{unknown}`")));
        }
        config = serde_json::from_value(value.clone())
            .map_err(|e| Failure::validation(format!("config {}: {e}", path.display())))?;
        file_value = Some(value);
    }
    macro_rules! overlay {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag.clone() { config.$field = v; })*
        };
    }
    overlay!(epochs => epochs, lr => lr, knn => knn, tau_i => tau_i, tau_c => tau_c,
        tau_att => tau_att, dim => projection, hidden => hidden, layers => layers);
    if let Some(rule) = args.transfer_rule() {
        config.transfer = rule;
    }
    config.validate()?;
    Ok((config, file_value))
}

/// Unscaled dataset as stored on disk.
struct Source {
    dataset: Dataset,
}

impl Source {
    fn load(dir: &Path) -> Result<Self, Failure> {
        let dataset = dataio::load_dataset(dir, LoadOptions { scale: false })?;
        Ok(Source { dataset })
    }

    fn clusters(&self) -> usize {
        self.dataset.labels.n_clusters()
    }

    fn check_eta(&self, eta: f64) -> Result<(), Failure> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Failure::validation(format!("missing rate must lie in [0,1], got {eta}")));
        }
        if self.dataset.mask.is_some() {
            return Err(Failure::validation(
                "the dataset ships a mask.csv; drop --eta to use it",
            ));
        }
        Ok(())
    }

    /// Model inputs for one cell: the mask (drawn from `eta` and `seed`, or
    /// the dataset's own) and the views min-max scaled over observed rows.
    fn inputs(&self, eta: Option<f64>, seed: u64) -> icmvc::Result<(ViewSet, ObservationMask)> {
        let views = &self.dataset.views;
        let mask = match (eta, &self.dataset.mask) {
            (Some(eta), _) => dataio::make_mask(views.n(), views.n_views(), eta, seed)?,
            (None, Some(mask)) => mask.clone(),
            (None, None) => {
                return Err(icmvc::Error::Config(
                    "no missing rate given and the dataset has no mask.csv; pass --eta".into(),
                ))
            }
        };
        Ok((dataio::minmax_scale(views, &mask), mask))
    }

    fn train(&self, eta: Option<f64>, config: &TrainConfig) -> icmvc::Result<trainer::TrainResult> {
        let (views, mask) = self.inputs(eta, config.seed)?;
        let labels = &self.dataset.labels;
        trainer::train_ablation(&views, &mask, self.clusters(), config, Some(labels))
    }
}

fn report_line(m: &MetricsReport) -> String {
    format!("ACC {:.4}  NMI {:.4}  ARI {:.4}", m.acc, m.nmi, m.ari)
}

fn config_body(config: &TrainConfig, file: &Option<Value>, data: &Path) -> Value {
    json!({
        "config": config,
        "config_hash": config.hash(),
        "config_file": file,
        "dataset": data.display().to_string(),
    })
}

pub fn gen(args: &GenArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        rotate: !args.no_rotate,
        ..SynthSpec::blobs(args.n, args.views, args.clusters, args.dim, args.sigma, args.seed)
    };
    let (views, labels) = dataio::synth_blobs(&spec)?;
    create_dir(&args.out)?;
    dataio::save_dataset(
        &args.out,
        &Dataset {
            views,
            labels,
            mask: None,
        },
    )?;
    manifest::write(&args.out, "gen", json!({ "synth": spec, "seeds": [args.seed] }))?;
    println!("wrote {} instances x {} views to {}", args.n, args.views, args.out.display());
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    let (mut config, file) = resolve_config(&args.train)?;
    config.seed = args.seed;
    if let Some(ablation) = args.ablate {
        config.flags = ablation.flags();
    }
    let source = Source::load(&args.train.data)?;
    if let Some(eta) = args.eta {
        source.check_eta(eta)?;
    }
    let result = source.train(args.eta, &config)?;
    create_dir(&args.out)?;
    trainer::write_run(&args.out, &result, args.embeddings)?;
    let mut body = config_body(&config, &file, &args.train.data);
    body["seeds"] = json!([args.seed]);
    body["eta"] = json!(args.eta);
    body["ablation"] = json!(args.ablate.unwrap_or(Ablation::Full).name());
    manifest::write(&args.out, "run", body)?;
    println!("{}", report_line(result.metrics.as_ref().expect("labels were supplied")));
    Ok(())
}

/// Outcome of one grid cell.
type Cell = Result<MetricsReport, icmvc::Error>;

fn cell_status(cell: &Cell) -> String {
    match cell {
        Ok(_) => "ok".into(),
        Err(icmvc::Error::Divergence { epoch, .. }) => format!("diverged at epoch {epoch}"),
        Err(e) => format!("failed with exit {}", exit_code(e)),
    }
}

/// Exit failure for a grid with failed cells: divergence if every failure
/// diverged, a data error otherwise.
fn grid_failure(cells: &[(String, &Cell)]) -> Result<(), Failure> {
    let failed: Vec<_> = cells.iter().filter(|(_, c)| c.is_err()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    for (name, cell) in &failed {
        if let Err(e) = cell {
            eprintln!("{name}: {e}");
        }
    }
    let all_diverged = failed
        .iter()
        .all(|(_, c)| matches!(c, Err(icmvc::Error::Divergence { .. })));
    Err(Failure {
        code: if all_diverged { EXIT_DIVERGENCE } else { EXIT_DATA },
        message: format!("{} of {} runs failed", failed.len(), cells.len()),
    })
}

fn jobs(seeds: &SeedArgs) -> Result<usize, Failure> {
    match seeds.jobs {
        Some(0) => Err(Failure::validation("--jobs must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(pool::default_jobs()),
    }
}

fn run_metrics(source: &Source, eta: Option<f64>, config: &TrainConfig) -> Cell {
    source
        .train(eta, config)
        .map(|r| r.metrics.expect("labels were supplied"))
}

pub const SWEEP_HEADER: &str = "row,eta,seed,status,acc,nmi,ari,acc_std,nmi_std,ari_std";

/// Cell rows in grid order, then one `mean` row per missing rate over the
/// cells that succeeded.
pub fn sweep_csv(etas: &[f64], seeds: &[u64], cells: &[Cell]) -> String {
    let f = dataio::format_f64;
    let mut out = format!("{SWEEP_HEADER}\n");
    for (i, cell) in cells.iter().enumerate() {
        let (eta, seed) = (etas[i / seeds.len()], seeds[i % seeds.len()]);
        let _ = write!(out, "cell,{},{seed},{}", f(eta), cell_status(cell));
        match cell {
            Ok(m) => {
                let _ = writeln!(out, ",{},{},{},,,", f(m.acc), f(m.nmi), f(m.ari));
            }
            Err(_) => out.push_str(",,,,,,\n"),
        }
    }
    for (e, &eta) in etas.iter().enumerate() {
        let ok: Vec<&MetricsReport> = cells[e * seeds.len()..(e + 1) * seeds.len()]
            .iter()
            .filter_map(|c| c.as_ref().ok())
            .collect();
        let status = if ok.len() == seeds.len() {
            "ok".to_string()
        } else {
            format!("{} of {} ok", ok.len(), seeds.len())
        };
        let stats: Vec<(f64, f64)> = [
            ok.iter().map(|m| m.acc).collect::<Vec<_>>(),
            ok.iter().map(|m| m.nmi).collect(),
            ok.iter().map(|m| m.ari).collect(),
        ]
        .iter()
        .map(|xs| trainer::mean_std(xs))
        .collect();
        let _ = writeln!(
            out,
            "mean,{},,{status},{},{},{},{},{},{}",
            f(eta),
            f(stats[0].0),
            f(stats[1].0),
            f(stats[2].0),
            f(stats[0].1),
            f(stats[1].1),
            f(stats[2].1)
        );
    }
    out
}

pub fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let (mut config, file) = resolve_config(&args.train)?;
    if let Some(ablation) = args.ablate {
        config.flags = ablation.flags();
    }
    let seeds = args.seeds.seed_list();
    if seeds.is_empty() || args.eta.is_empty() {
        return Err(Failure::validation("need at least one missing rate and one seed"));
    }
    let workers = jobs(&args.seeds)?;
    let source = Source::load(&args.train.data)?;
    for &eta in &args.eta {
        source.check_eta(eta)?;
    }
    let grid: Vec<(f64, u64)> = args
        .eta
        .iter()
        .flat_map(|&eta| seeds.iter().map(move |&seed| (eta, seed)))
        .collect();
    let cells = pool::map(&grid, workers, |&(eta, seed)| {
        let config = TrainConfig { seed, ..config.clone() };
        let cell = run_metrics(&source, Some(eta), &config);
        match &cell {
            Ok(m) => eprintln!("eta={eta} seed={seed}: {}", report_line(m)),
            Err(_) => eprintln!("eta={eta} seed={seed}: {}", cell_status(&cell)),
        }
        cell
    });
    create_dir(&args.out)?;
    write_file(&args.out.join("sweep.csv"), &sweep_csv(&args.eta, &seeds, &cells))?;
    let mut body = config_body(&config, &file, &args.train.data);
    body["seeds"] = json!(seeds);
    body["etas"] = json!(args.eta);
    body["ablation"] = json!(args.ablate.unwrap_or(Ablation::Full).name());
    manifest::write(&args.out, "sweep", body)?;
    let named: Vec<(String, &Cell)> = grid
        .iter()
        .zip(&cells)
        .map(|((eta, seed), c)| (format!("eta={eta} seed={seed}"), c))
        .collect();
    grid_failure(&named)?;
    println!("wrote {} cells to {}", cells.len(), args.out.join("sweep.csv").display());
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<(), Failure> {
    let (config, file) = resolve_config(&args.train)?;
    let seeds = args.seeds.seed_list();
    if seeds.is_empty() {
        return Err(Failure::validation("need at least one seed"));
    }
    let workers = jobs(&args.seeds)?;
    let source = Source::load(&args.train.data)?;
    source.check_eta(args.eta)?;
    let grid: Vec<(Ablation, u64)> = Ablation::ALL
        .into_iter()
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let cells = pool::map(&grid, workers, |&(ablation, seed)| {
        let config = TrainConfig {
            seed,
            flags: ablation.flags(),
            ..config.clone()
        };
        let cell = run_metrics(&source, Some(args.eta), &config);
        match &cell {
            Ok(m) => eprintln!("{} seed={seed}: {}", ablation.name(), report_line(m)),
            Err(_) => eprintln!("{} seed={seed}: {}", ablation.name(), cell_status(&cell)),
        }
        cell
    });
    let rows: Vec<AblationRow> = Ablation::ALL
        .iter()
        .enumerate()
        .map(|(a, &ablation)| {
            let ok: Vec<&MetricsReport> = cells[a * seeds.len()..(a + 1) * seeds.len()]
                .iter()
                .filter_map(|c| c.as_ref().ok())
                .collect();
            AblationRow {
                ablation,
                acc: ok.iter().map(|m| m.acc).collect(),
                nmi: ok.iter().map(|m| m.nmi).collect(),
                ari: ok.iter().map(|m| m.ari).collect(),
            }
        })
        .collect();
    create_dir(&args.out)?;
    let table = trainer::ablation_csv(&rows);
    write_file(&args.out.join("ablation.csv"), &table)?;
    let mut body = config_body(&config, &file, &args.train.data);
    body["seeds"] = json!(seeds);
    body["eta"] = json!(args.eta);
    manifest::write(&args.out, "ablate", body)?;
    let named: Vec<(String, &Cell)> = grid
        .iter()
        .zip(&cells)
        .map(|((a, seed), c)| (format!("{} seed={seed}", a.name()), c))
        .collect();
    grid_failure(&named)?;
    print!("{table}");
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let pred: Labels = dataio::read_labels(&args.pred)?;
    let truth: Labels = dataio::read_labels(&args.truth)?;
    if pred.len() != truth.len() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{} predicted labels vs {} true labels", pred.len(), truth.len()),
        });
    }
    let report = metrics::evaluate(&pred, &truth)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        write_file(&out.join("metrics.json"), &text)?;
        manifest::write(
            out,
            "eval",
            json!({
                "pred": args.pred.display().to_string(),
                "truth": args.truth.display().to_string(),
            }),
        )?;
    }
    println!("{}", report_line(&report));
    Ok(())
}
