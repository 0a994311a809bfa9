use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scss::bench::{
    run_ber_sweep, run_mse_sweep, run_sync_eval, run_theorem1_check, SweepConfig, SweepResult, SyncEvalConfig,
};
use scss::bounds::{sync_decay_experiment, SyncSetup};
use scss::covariance::{build_bank, write_bank, InterferenceSource, SoiSource};
use scss::estimators::Method;
use scss::mixture::{gen_dataset, read_dataset, write_dataset, MixtureParams, FLAG_COMPONENTS};
use scss::signals::{ComplexSignal, OfdmSpec, QpskSpec};
use scss::{Error, Result};

/// Single-channel source separation of a QPSK signal from CP-OFDM interference.
#[derive(Parser, Debug)]
#[command(name = "scss", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a labeled mixture dataset.
    Gen(Opts),
    /// Build and store the covariance bank for one operating point.
    Cov(Opts),
    /// MSE of the estimators versus SIR on Gaussian surrogates.
    SweepMse(Opts),
    /// BER after separation and matched filtering versus SIR.
    SweepBer(Opts),
    /// MMSE / MAP-QLMMSE error ratio and regret versus N.
    Theorem1(Opts),
    /// Score shift estimates against dataset labels.
    SyncEval(Opts),
    /// Synchronization error decay next to the Chernoff bounds.
    BoundsCheck(Opts),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Gen(_) => "gen",
            Cmd::Cov(_) => "cov",
            Cmd::SweepMse(_) => "sweep-mse",
            Cmd::SweepBer(_) => "sweep-ber",
            Cmd::Theorem1(_) => "theorem1",
            Cmd::SyncEval(_) => "sync-eval",
            Cmd::BoundsCheck(_) => "bounds-check",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Cmd::Gen(o)
            | Cmd::Cov(o)
            | Cmd::SweepMse(o)
            | Cmd::SweepBer(o)
            | Cmd::Theorem1(o)
            | Cmd::SyncEval(o)
            | Cmd::BoundsCheck(o) => o,
        }
    }
}

/// Every option may also be given as `key = value` in the --config file;
/// command-line flags win.
#[derive(Args, Debug, Default)]
struct Opts {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// Output file (CSV goes to stdout when omitted).
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<String>,
    /// SIR grid in dB: value, list a,b,c or range start:stop:step.
    #[arg(long, allow_hyphen_values = true)]
    sir: Option<String>,
    /// SNR grid in dB; "inf" for noiseless.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    /// Window length(s) in samples.
    #[arg(long)]
    n: Option<String>,
    /// Trials per grid point (records for gen).
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    block_len: Option<String>,
    #[arg(long)]
    sync_window: Option<String>,
    /// Comma-separated estimator names.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    eps_scale: Option<String>,
    /// gen: "discrete" (QPSK / 16-QAM) or "gaussian".
    #[arg(long)]
    alphabet: Option<String>,
    /// cov: estimate from this dataset; sync-eval: labeled dataset.
    #[arg(long)]
    dataset: Option<String>,
    /// sync-eval: prediction file from an external synchronizer.
    #[arg(long)]
    predictions: Option<String>,
    /// sync-eval: internal synchronizer, "map" or "psi".
    #[arg(long)]
    rule: Option<String>,
}

const KEYS: [&str; 15] = [
    "seed",
    "out",
    "workers",
    "sir",
    "snr",
    "n",
    "trials",
    "block-len",
    "sync-window",
    "methods",
    "eps-scale",
    "alphabet",
    "dataset",
    "predictions",
    "rule",
];

/// Keys that do not affect results and stay out of the provenance header.
const UNLOGGED: [&str; 2] = ["out", "workers"];

fn defaults(cmd: &str) -> Vec<(&'static str, &'static str)> {
    let mut d = vec![("seed", "0"), ("eps-scale", "1e-9"), ("block-len", "320"), ("sync-window", "640")];
    d.extend(match cmd {
        "gen" => vec![("sir", "0"), ("snr", "20"), ("n", "640"), ("trials", "100"), ("alphabet", "discrete")],
        "cov" => vec![("sir", "0"), ("snr", "20"), ("n", "320")],
        "sweep-mse" => vec![
            ("sir", "-18:0:6"),
            ("snr", "20"),
            ("n", "320"),
            ("trials", "200"),
            ("methods", "LMMSE,MAP-QLMMSE,PSI-QLMMSE,MMSE"),
        ],
        "sweep-ber" => vec![
            ("sir", "-10:-2:2"),
            ("snr", "inf"),
            ("n", "10240"),
            ("trials", "20"),
            ("methods", "MF,LMMSE,MAP-QLMMSE"),
        ],
        "theorem1" => vec![("sir", "0"), ("snr", "20"), ("n", "40,80,160,320"), ("trials", "2000")],
        "sync-eval" => vec![("rule", "map")],
        "bounds-check" => vec![("sir", "0"), ("snr", "20"), ("n", "80,160,320,640"), ("trials", "1000")],
        _ => vec![],
    });
    d
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn read_config(path: &PathBuf) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(usage(format!("{}:{}: unknown key '{}'", path.display(), i + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Defaults, then the config file, then flags.
fn resolve(cmd: &Cmd) -> Result<BTreeMap<String, String>> {
    let o = cmd.opts();
    let mut map: BTreeMap<String, String> = defaults(cmd.name())
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    if let Some(p) = &o.config {
        map.extend(read_config(p)?);
    }
    let flags = [
        ("seed", &o.seed),
        ("out", &o.out),
        ("workers", &o.workers),
        ("sir", &o.sir),
        ("snr", &o.snr),
        ("n", &o.n),
        ("trials", &o.trials),
        ("block-len", &o.block_len),
        ("sync-window", &o.sync_window),
        ("methods", &o.methods),
        ("eps-scale", &o.eps_scale),
        ("alphabet", &o.alphabet),
        ("dataset", &o.dataset),
        ("predictions", &o.predictions),
        ("rule", &o.rule),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
    Ok(map)
}

fn parse_f64(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| usage(format!("not a number: '{s}'"))),
    }
}

/// `v`, `a,b,c` or inclusive `start:stop:step`.
fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => s.split(',').map(parse_f64).collect(),
        3 => {
            let (a, b, step) = (parse_f64(parts[0])?, parse_f64(parts[1])?, parse_f64(parts[2])?);
            if !a.is_finite() || !b.is_finite() || step == 0.0 || !step.is_finite() || (b - a) * step < 0.0 {
                return Err(usage(format!("bad range '{s}'")));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            if count > 10_000 {
                return Err(usage(format!("range '{s}' has too many points")));
            }
            Ok((0..count)
                .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
                .collect())
        }
        _ => Err(usage(format!("bad grid '{s}'"))),
    }
}

fn parse_usizes(s: &str) -> Result<Vec<usize>> {
    parse_grid(s)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(usage(format!("not a non-negative integer in '{s}'")))
            }
        })
        .collect()
}

struct Resolved {
    map: BTreeMap<String, String>,
}

impl Resolved {
    fn get(&self, k: &str) -> Result<&str> {
        self.map
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| usage(format!("missing --{k}")))
    }

    fn usize(&self, k: &str) -> Result<usize> {
        self.get(k)?
            .trim()
            .parse()
            .map_err(|_| usage(format!("--{k} must be a non-negative integer")))
    }

    fn u64(&self, k: &str) -> Result<u64> {
        self.get(k)?
            .trim()
            .parse()
            .map_err(|_| usage(format!("--{k} must be a non-negative integer")))
    }

    fn f64(&self, k: &str) -> Result<f64> {
        parse_f64(self.get(k)?)
    }

    fn grid(&self, k: &str) -> Result<Vec<f64>> {
        parse_grid(self.get(k)?)
    }

    fn single(&self, k: &str) -> Result<f64> {
        match self.grid(k)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(usage(format!("--{k} takes a single value here"))),
        }
    }

    fn path(&self, k: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get(k)?))
    }

    fn sweep(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            sir_db: self.grid("sir")?,
            snr_db: self.grid("snr")?,
            n: parse_usizes(self.get("n")?)?,
            methods: match self.map.get("methods") {
                Some(m) => m.split(',').map(|s| s.parse()).collect::<Result<Vec<Method>>>()?,
                None => vec![Method::MapQlmmse],
            },
            trials: self.usize("trials")?,
            master_seed: self.u64("seed")?,
            block_len: self.usize("block-len")?,
            sync_window: self.usize("sync-window")?,
            epsilon_scale: self.f64("eps-scale")?,
            out: self.map.get("out").map(PathBuf::from),
        })
    }

    fn provenance(&self, cmd: &str) -> Vec<String> {
        let mut c = vec![format!("scss {cmd}")];
        c.extend(
            self.map
                .iter()
                .filter(|(k, _)| !UNLOGGED.contains(&k.as_str()))
                .map(|(k, v)| format!("{k}={v}")),
        );
        c
    }
}

fn emit(text: &str, out: Option<&String>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_sweep(mut r: SweepResult, cfg: &Resolved, cmd: &str) -> Result<()> {
    let mut c = cfg.provenance(cmd);
    c.append(&mut r.comments);
    r.comments = c;
    emit(&r.to_csv(), cfg.map.get("out"))
}

/// Checks every value before any work starts, so bad input is a usage error.
fn prepare(cmd: &Cmd, cfg: &Resolved) -> Result<()> {
    cfg.u64("seed")?;
    cfg.f64("eps-scale")?;
    cfg.usize("block-len")?;
    cfg.usize("sync-window")?;
    if let Some(w) = cfg.map.get("workers") {
        w.trim()
            .parse::<usize>()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| usage("--workers must be a positive integer"))?;
    }
    match cmd {
        Cmd::SweepBer(_) => scss::bench::validate_ber(&cfg.sweep()?),
        Cmd::SweepMse(_) | Cmd::Theorem1(_) => cfg.sweep()?.validate(),
        Cmd::Gen(_) => {
            cfg.single("sir")?;
            cfg.single("snr")?;
            cfg.usize("n")?;
            cfg.usize("trials")?;
            cfg.path("out")?;
            match cfg.get("alphabet")? {
                "discrete" | "gaussian" => Ok(()),
                a => Err(usage(format!("unknown alphabet '{a}'"))),
            }
        }
        Cmd::Cov(_) => {
            cfg.single("sir")?;
            cfg.single("snr")?;
            cfg.usize("n")?;
            cfg.path("out").map(|_| ())
        }
        Cmd::SyncEval(_) => {
            cfg.path("dataset")?;
            cfg.get("rule")?.parse::<scss::bench::SyncRule>().map(|_| ())
        }
        Cmd::BoundsCheck(_) => {
            cfg.single("sir")?;
            cfg.single("snr")?;
            parse_usizes(cfg.get("n")?)?;
            cfg.usize("trials").map(|_| ())
        }
    }
}

fn run(cmd: &Cmd, cfg: &Resolved) -> Result<()> {
    let name = cmd.name();
    match cmd {
        Cmd::Gen(_) => {
            let (qpsk, ofdm) = match cfg.get("alphabet")? {
                "gaussian" => (QpskSpec::gaussian(), OfdmSpec::gaussian()),
                _ => (QpskSpec::default(), OfdmSpec::default()),
            };
            let params = MixtureParams::new(cfg.usize("n")?, cfg.single("sir")?, cfg.single("snr")?, &qpsk, &ofdm);
            let d = gen_dataset(&qpsk, &ofdm, &params, cfg.usize("trials")?, cfg.u64("seed")?)?;
            write_dataset(&d, &cfg.path("out")?)
        }
        Cmd::Cov(_) => {
            let l = cfg.usize("n")?;
            let eps = cfg.f64("eps-scale")?;
            let ofdm = OfdmSpec::default();
            let (bank, sir, snr) = match cfg.map.get("dataset") {
                None => {
                    let (sir, snr) = (cfg.single("sir")?, cfg.single("snr")?);
                    let bank = build_bank(
                        &SoiSource::Analytic(QpskSpec::default()),
                        &InterferenceSource::Analytic(ofdm.clone()),
                        sir,
                        snr,
                        l,
                        ofdm.period(),
                        eps,
                    )?;
                    (bank, sir, snr)
                }
                Some(p) => {
                    let d = read_dataset(&PathBuf::from(p))?;
                    if d.header.flags & FLAG_COMPONENTS == 0 {
                        return Err(Error::Format("dataset has no stored components".into()));
                    }
                    let soi: Vec<ComplexSignal> = d
                        .records
                        .iter()
                        .filter(|r| r.k_s == 0)
                        .filter_map(|r| r.s.clone())
                        .collect();
                    let intf: Vec<(ComplexSignal, usize)> = d
                        .records
                        .iter()
                        .filter_map(|r| r.b.clone().map(|b| (b, r.k_b)))
                        .collect();
                    let bank = build_bank(
                        &SoiSource::Empirical {
                            windows: &soi,
                            period: d.header.k_s_period,
                        },
                        &InterferenceSource::Empirical { windows: &intf },
                        d.header.sir_db,
                        d.header.snr_db,
                        l,
                        d.header.k_b_period,
                        eps,
                    )?;
                    (bank, d.header.sir_db, d.header.snr_db)
                }
            };
            write_bank(&bank, sir, snr, &cfg.path("out")?)
        }
        Cmd::SweepMse(_) => emit_sweep(run_mse_sweep(&cfg.sweep()?)?, cfg, name),
        Cmd::SweepBer(_) => emit_sweep(run_ber_sweep(&cfg.sweep()?)?, cfg, name),
        Cmd::Theorem1(_) => emit_sweep(run_theorem1_check(&cfg.sweep()?)?, cfg, name),
        Cmd::SyncEval(_) => {
            let sc = SyncEvalConfig {
                dataset: cfg.path("dataset")?,
                predictions: cfg.map.get("predictions").map(PathBuf::from),
                rule: cfg.get("rule")?.parse()?,
                block_len: cfg.usize("block-len")?,
                epsilon_scale: cfg.f64("eps-scale")?,
            };
            emit_sweep(run_sync_eval(&sc)?, cfg, name)
        }
        Cmd::BoundsCheck(_) => {
            let mut setup = SyncSetup::gaussian(cfg.single("sir")?, cfg.single("snr")?);
            setup.epsilon_scale = cfg.f64("eps-scale")?;
            let n_values = parse_usizes(cfg.get("n")?)?;
            let curve = sync_decay_experiment(
                |n| setup.analytic_bank(n),
                &setup,
                &n_values,
                cfg.usize("trials")?,
                cfg.u64("seed")?,
            )?;
            let mut text = String::new();
            for c in cfg.provenance(name) {
                text.push_str(&format!("# {c}\n"));
            }
            for (i, n) in curve.n_values.iter().enumerate() {
                text.push_str(&format!(
                    "# n={n} psi_err_prob={} log10_union_bound={}\n",
                    curve.psi_err_prob[i], curve.log10_union[i]
                ));
            }
            text.push_str(&curve.to_csv());
            emit(&text, cfg.map.get("out"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli.cmd).map(|map| Resolved { map }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = prepare(&cli.cmd, &cfg) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if let Some(w) = cfg.map.get("workers") {
        let w: usize = w.trim().parse().expect("checked in prepare");
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli.cmd, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
