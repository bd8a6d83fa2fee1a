use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isac_core::beamform::design;
use isac_core::detection::{detection_probability, min_energy, monte_carlo_detect_multi};
use isac_core::harness::{read_scene, read_sweep, run_figures, run_sweep_in, write_csv};
use isac_core::{build_channels, default_paper_scene, DetectorSpec, IsacError, PaperScene, ProblemVariant, Receiver, Scenario, Scene, Scheme};

#[derive(Parser)]
#[command(name = "isac", version, about = "Coordinated ISAC transmit beamforming for target detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem variant and print the design summary.
    Solve(PointArgs),
    /// Run a sweep described by a JSON file and write a CSV.
    Sweep {
        /// Sweep specification (JSON).
        config: PathBuf,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Compare the closed-form detection probability with simulation.
    DetectMc {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Run the four standard sweep families, one CSV each.
    Figures {
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        antennas: usize,
        /// Monte-Carlo trials per point (0 = closed form only).
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Proposed,
    Zf,
    Sensing,
}

#[derive(Args)]
struct PointArgs {
    /// `one_cu`, `three_cu`, `rotation:<degrees>` or a scene JSON file.
    #[arg(long, default_value = "one_cu")]
    scene: String,
    /// 1: synchronized BSs, 2: unsynchronized.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: u8,
    /// 1: no sensing-interference cancellation, 2: with cancellation.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    receiver: u8,
    #[arg(long, value_enum, default_value = "proposed")]
    scheme: SchemeArg,
    #[arg(long)]
    gamma_db: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pfa: f64,
    #[arg(long)]
    pmax: Option<f64>,
    #[arg(long)]
    antennas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl PointArgs {
    fn scene(&self) -> Result<Scene, IsacError> {
        let mut scene = match self.scene.as_str() {
            "one_cu" => default_paper_scene(PaperScene::OneCu),
            "three_cu" => default_paper_scene(PaperScene::ThreeCu),
            s if s.starts_with("rotation:") => {
                let deg: f64 = s["rotation:".len()..]
                    .parse()
                    .map_err(|_| IsacError::Config(format!("bad rotation angle in {s:?}")))?;
                default_paper_scene(PaperScene::Rotation(deg.to_radians()))
            }
            path => read_scene(Path::new(path))?,
        };
        if let Some(n) = self.antennas {
            scene = scene.with_antennas(n);
        }
        if let Some(g) = self.gamma_db {
            scene.set_gamma_db(g);
        }
        if let Some(p) = self.pmax {
            scene.p_max = p;
        }
        if let Some(s) = self.seed {
            scene.rng_seed = s;
        }
        Ok(scene)
    }

    fn variant(&self) -> ProblemVariant {
        let scenario = if self.scenario == 1 { Scenario::SyncI } else { Scenario::UnsyncII };
        let receiver = if self.receiver == 1 { Receiver::TypeI } else { Receiver::TypeII };
        let scheme = match self.scheme {
            SchemeArg::Proposed => Scheme::Proposed,
            SchemeArg::Zf => Scheme::Zf,
            SchemeArg::Sensing => Scheme::SensingOnly,
        };
        ProblemVariant::new(scenario, receiver, scheme)
    }
}

fn solve(args: &PointArgs) -> Result<(), IsacError> {
    let scene = args.scene()?;
    let v = args.variant();
    let ch = build_channels(&scene)?;
    let d = design(v, &ch, &scene)?;
    println!("variant      {:?} / {:?} / {:?}", v.scenario, v.receiver, v.scheme);
    println!("status       {} ({} iterations)", d.sdr.status(), d.sdr.report.iterations);
    let Some(beams) = d.beams else {
        return Ok(());
    };
    let (energy, q) = min_energy(&beams, &ch, v.scenario, v.comm_in_energy());
    let pd = detection_probability(energy, &DetectorSpec::new(args.pfa, scene.noise_radar, v.scenario)?)?;
    println!("omega        {:.6e}", d.sdr.omega);
    println!("worst sample {q}, energy {energy:.6e}");
    println!("p_D          {pd:.6} at p_FA {}", args.pfa);
    let r = &beams.residuals;
    println!("sinr slack   {:.3e} (worst, relative)", r.worst_sinr());
    println!("power slack  {:.3e} W (worst)", r.worst_power());
    for l in 0..beams.num_cells() {
        println!(
            "BS {l}: power {:.4} W, sensing {:.4e} W, min eig {:.3e}, clipped {:.3e}",
            beams.bs_power(l),
            beams.r_cov[l].trace().re,
            r.r_min_eig[l],
            r.psd_clip[l]
        );
    }
    Ok(())
}

fn detect_mc(args: &PointArgs, trials: usize) -> Result<(), IsacError> {
    let scene = args.scene()?;
    let v = args.variant();
    let ch = build_channels(&scene)?;
    let d = design(v, &ch, &scene)?;
    d.sdr.ensure_optimal()?;
    let beams = d.beams.expect("optimal designs carry beams");
    let seen = if v.comm_in_energy() { beams } else { beams.sensing_part() };
    let (energy, q) = min_energy(&seen, &ch, v.scenario, true);
    let pfas = [args.pfa];
    let seed = args.seed.unwrap_or(scene.rng_seed);
    let out = monte_carlo_detect_multi(&seen, &ch, q, v.scenario, scene.noise_radar, &pfas, trials, seed)?;
    println!("sample {q}, energy {energy:.6e}, {trials} trials");
    for r in &out.rates {
        let pd = detection_probability(energy, &DetectorSpec::new(r.p_fa_target, scene.noise_radar, v.scenario)?)?;
        let band = |p: f64| 3.0 * (p * (1.0 - p) / trials as f64).sqrt() + 0.005;
        println!(
            "p_FA {:.1e}: p_D closed form {pd:.6}, simulated {:.6} (band {:.4}); p_FA simulated {:.6} (band {:.4})",
            r.p_fa_target,
            r.p_d_hat,
            band(pd),
            r.p_fa_hat,
            band(r.p_fa_target)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), IsacError> {
    match cli.command {
        Command::Solve(args) => solve(&args),
        Command::Sweep { config, out } => {
            let spec = read_sweep(&config)?;
            let rows = run_sweep_in(&spec, config.parent())?;
            write_csv(&rows, &out)?;
            println!("{} rows -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::DetectMc { point, trials } => detect_mc(&point, trials),
        Command::Figures { out, antennas, trials, seed } => {
            for path in run_figures(&out, antennas, trials, seed)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
