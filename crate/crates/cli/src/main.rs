mod desc;

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tds_hinf::{
    char_roots, hinf_design, interconnect, log_grid, robust_spectral_abscissa, sigma_sweep,
    stabilize_from, strong_hinf_norm_with, ControllerBlock, DdaeSystem, Error, NormBranch,
    NormOptions, PlantBlock, RootOptions, SynthesisOptions,
};

#[derive(Parser)]
#[command(
    name = "tds-hinf",
    about = "Strong H-infinity analysis and fixed-order synthesis for time-delay descriptor systems",
    version
)]
struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Characteristic roots in a right half-plane window, with residuals,
    /// cluster summary and the strong stability verdict.
    Roots {
        file: PathBuf,
        /// Left edge of the search window.
        #[arg(long, allow_hyphen_values = true)]
        min_real: Option<f64>,
        /// Roots closer than this are reported as one cluster.
        #[arg(long)]
        cluster_radius: Option<f64>,
        /// Write the root table as CSV (re,im,residual,multiplicity).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Strong H-infinity norm: asymptotic (torus) part, finite-frequency
    /// level-set part, and which branch attains the maximum.
    Norm {
        file: PathBuf,
        /// Also write a singular value sweep as CSV (omega,sigma).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Largest-singular-value frequency sweep written as CSV.
    Sweep {
        file: PathBuf,
        /// CSV destination (omega,sigma).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Search controller parameters that make the closed loop strongly
    /// exponentially stable.
    Stabilize {
        file: PathBuf,
        #[command(flatten)]
        syn: SynArgs,
    },
    /// Minimize the strong H-infinity norm of the closed loop over the free
    /// controller parameters, stabilizing first when needed.
    Hinfsyn {
        file: PathBuf,
        /// Description file whose [controller] block seeds the search
        /// (overrides any controller in the main file).
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        syn: SynArgs,
    },
    /// Parse a description file and report its dimensions.
    Info { file: PathBuf },
}

#[derive(Args)]
struct GridArgs {
    /// Lower end of the frequency grid in rad/s.
    #[arg(long, default_value_t = 1e-3)]
    wmin: f64,
    /// Upper end of the frequency grid in rad/s.
    #[arg(long, default_value_t = 1e3)]
    wmax: f64,
    /// Number of logarithmically spaced grid points.
    #[arg(long, default_value_t = 2000)]
    points: usize,
}

#[derive(Args)]
struct SynArgs {
    /// Controller order (states of the controller).
    #[arg(long, default_value_t = 0)]
    order: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Write the resulting controller as a description-file fragment.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    /// Unreadable, unparsable or inconsistent input: exit 1.
    Input(String),
    /// No stabilizing parameters found: exit 2.
    Synthesis(String),
    /// The analysis itself failed: exit 3.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Synthesis(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Synthesis(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoStabilizingControllerFound { .. } => CliError::Synthesis(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Roots {
            file,
            min_real,
            cluster_radius,
            out,
        } => cmd_roots(&file, min_real, cluster_radius, out.as_deref()),
        Command::Norm { file, out, grid } => cmd_norm(&file, out.as_deref(), &grid),
        Command::Sweep { file, out, grid } => cmd_sweep(&file, &out, &grid),
        Command::Stabilize { file, syn } => cmd_stabilize(&file, &syn),
        Command::Hinfsyn { file, init, syn } => cmd_hinfsyn(&file, init.as_deref(), &syn),
        Command::Info { file } => cmd_info(&file),
    }
}

fn load(path: &Path) -> Result<desc::DescriptionFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    desc::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// The system a description file denotes: either the raw DDAE, or the plant
/// in closed loop with the declared controller (zero static gain when no
/// controller is given, which leaves the plant uncontrolled).
fn analysis_system(file: &desc::DescriptionFile) -> Result<DdaeSystem, CliError> {
    if let Some(d) = &file.ddae {
        return desc::build_ddae(d).map_err(CliError::Input);
    }
    let Some(p) = &file.plant else {
        return Err(CliError::Input(
            "description declares neither [ddae] nor [plant]".into(),
        ));
    };
    let plant = desc::build_plant(p).map_err(CliError::Input)?;
    let k = declared_controller(file, &plant)?;
    let tau_fb = file.options.feedback_delay.unwrap_or(0.0);
    interconnect(&plant, &k, tau_fb).map_err(|e| CliError::Input(e.to_string()))
}

fn declared_controller(
    file: &desc::DescriptionFile,
    plant: &PlantBlock,
) -> Result<ControllerBlock, CliError> {
    match &file.controller {
        Some(c) => {
            let k = desc::build_controller(c, plant.n_u(), plant.n_y()).map_err(CliError::Input)?;
            k.validate(plant.n_u(), plant.n_y())
                .map_err(|e| CliError::Input(e.to_string()))?;
            Ok(k)
        }
        None => Ok(ControllerBlock::zero(0, plant.n_u(), plant.n_y())),
    }
}

fn require_plant(file: &desc::DescriptionFile, path: &Path) -> Result<PlantBlock, CliError> {
    match &file.plant {
        Some(p) => desc::build_plant(p).map_err(CliError::Input),
        None => Err(CliError::Input(format!(
            "{}: synthesis needs a [plant] block, not a raw [ddae]",
            path.display()
        ))),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn norm_options(file: &desc::DescriptionFile) -> NormOptions {
    let mut opts = NormOptions::default();
    if let Some(d) = file.options.grid_density {
        opts.grid_density = d;
    }
    if let Some(t) = file.options.rel_tol {
        opts.rel_tol = t;
    }
    opts
}

fn synthesis_options(file: &desc::DescriptionFile, syn: &SynArgs) -> SynthesisOptions {
    let mut opts = SynthesisOptions::default();
    let o = &file.options;
    if let Some(s) = syn.seed.or(o.seed) {
        opts.seed = s;
    }
    if let Some(r) = syn.restarts.or(o.restarts) {
        opts.restarts = r.max(1);
    }
    if let Some(m) = syn.max_iter.or(o.max_iter) {
        opts.optimizer.max_iter = m;
    }
    if let Some(t) = o.feedback_delay {
        opts.feedback_delay = t;
    }
    opts
}

fn cmd_roots(
    path: &Path,
    min_real: Option<f64>,
    cluster_radius: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let file = load(path)?;
    let sys = analysis_system(&file)?;
    let r_min = min_real.or(file.options.min_real).unwrap_or(-1.0);
    let mut opts = RootOptions::default();
    if let Some(r) = cluster_radius.or(file.options.cluster_radius) {
        opts.cluster_radius = r;
    }
    let spec = char_roots(&sys, r_min, &opts)?;
    let report = robust_spectral_abscissa(&sys)?;

    println!("state dimension            {}", sys.n());
    println!("delays                     {:?}", sys.delays());
    println!("window                     Re(lambda) >= {r_min}");
    println!("discretization order       {}", spec.order_used);
    println!();
    println!(
        "{:>24}  {:>24}  {:>9}  {:>4}",
        "re", "im", "residual", "mult"
    );
    for root in &spec.roots {
        println!(
            "{:>24.16e}  {:>24.16e}  {:>9.2e}  {:>4}",
            root.lambda.re, root.lambda.im, root.residual, root.multiplicity
        );
    }
    if let Some(top) = spec.clusters.first() {
        if top.multiplicity > 1 {
            println!();
            println!(
                "rightmost cluster          {:.6} + {:.6}i, multiplicity {}, radius {:.2e}",
                top.center.re, top.center.im, top.multiplicity, top.radius
            );
        }
    }
    println!();
    println!("spectral abscissa          {:.16e}", report.alpha);
    if report.c_d.is_finite() {
        println!("difference abscissa        {:.16e}", report.c_d);
    } else {
        println!("difference abscissa        -inf (no delayed algebraic coupling)");
    }
    println!("robust spectral abscissa   {:.16e}", report.alpha_bar);
    println!(
        "strongly stable            {}",
        if report.strongly_stable { "yes" } else { "no" }
    );

    if let Some(csv) = out {
        let mut text = String::from("re,im,residual,multiplicity\n");
        for root in &spec.roots {
            text.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{}\n",
                root.lambda.re, root.lambda.im, root.residual, root.multiplicity
            ));
        }
        write_file(csv, &text)?;
    }
    Ok(())
}

fn cmd_norm(path: &Path, out: Option<&Path>, grid: &GridArgs) -> Result<(), CliError> {
    let file = load(path)?;
    let sys = analysis_system(&file)?;
    let res = strong_hinf_norm_with(&sys, &norm_options(&file))?;

    println!("strong H-infinity norm     {:.16e}", res.value);
    println!(
        "attained by                {}",
        match res.branch {
            NormBranch::FiniteFrequency => "finite-frequency peak",
            NormBranch::Asymptotic => "asymptotic (high-frequency) part",
        }
    );
    println!("asymptotic part            {:.16e}", res.asymptotic.value);
    if !res.asymptotic.theta.is_empty() {
        println!("  torus argmax             {:?}", res.asymptotic.theta);
    }
    println!("finite-frequency part      {:.16e}", res.finite.value);
    match res.finite.omega {
        Some(w) => println!("  peak frequency           {:.16e} rad/s", w),
        None => println!("  peak frequency           below the asymptotic level"),
    }
    println!("  discretization order     {}", res.finite.order_used);
    println!(
        "  frequency window capped  {}",
        if res.finite.frequency_capped {
            "yes"
        } else {
            "no"
        }
    );

    if let Some(csv) = out {
        write_sweep_csv(&sys, grid, csv)?;
    }
    Ok(())
}

fn cmd_sweep(path: &Path, out: &Path, grid: &GridArgs) -> Result<(), CliError> {
    let file = load(path)?;
    let sys = analysis_system(&file)?;
    let (wmax, points) = write_sweep_csv(&sys, grid, out)?;
    println!(
        "wrote {points} samples on [{:.3e}, {:.3e}] rad/s to {}",
        grid.wmin,
        wmax,
        out.display()
    );
    Ok(())
}

fn write_sweep_csv(
    sys: &DdaeSystem,
    grid: &GridArgs,
    out: &Path,
) -> Result<(f64, usize), CliError> {
    if !(grid.wmin.is_finite() && grid.wmax.is_finite()) || grid.wmin <= 0.0 {
        return Err(CliError::Input(
            "frequency grid needs 0 < wmin <= wmax, both finite".into(),
        ));
    }
    if grid.points < 2 || grid.wmax <= grid.wmin {
        return Err(CliError::Input(
            "frequency grid needs at least 2 points and wmax > wmin".into(),
        ));
    }
    let omegas = log_grid(grid.wmin, grid.wmax, grid.points);
    let response = sigma_sweep(sys, &omegas)?;
    let mut text = String::from("omega,sigma\n");
    for p in &response.points {
        match p.sigma {
            Some(s) => text.push_str(&format!("{:.16e},{:.16e}\n", p.omega, s)),
            None => text.push_str(&format!("{:.16e},nan\n", p.omega)),
        }
    }
    write_file(out, &text)?;
    Ok((grid.wmax, response.points.len()))
}

fn cmd_stabilize(path: &Path, syn: &SynArgs) -> Result<(), CliError> {
    let file = load(path)?;
    let plant = require_plant(&file, path)?;
    let opts = synthesis_options(&file, syn);
    let k0 = match &file.controller {
        Some(c) => desc::build_controller(c, plant.n_u(), plant.n_y()).map_err(CliError::Input)?,
        None => ControllerBlock::zero(syn.order, plant.n_u(), plant.n_y()),
    };
    let (k, alpha, report) = stabilize_from(&plant, &k0, &opts)?;
    println!("robust spectral abscissa   {:.16e}", alpha);
    println!("iterations                 {}", report.iterations);
    print!("{}", desc::controller_fragment(&k));
    if let Some(out) = &syn.out {
        write_file(out, &desc::controller_fragment(&k))?;
    }
    Ok(())
}

fn cmd_hinfsyn(path: &Path, init: Option<&Path>, syn: &SynArgs) -> Result<(), CliError> {
    let file = load(path)?;
    let plant = require_plant(&file, path)?;
    let opts = synthesis_options(&file, syn);
    let k_init = match init {
        Some(p) => {
            let init_file = load(p)?;
            match &init_file.controller {
                Some(c) => Some(
                    desc::build_controller(c, plant.n_u(), plant.n_y()).map_err(CliError::Input)?,
                ),
                None => {
                    return Err(CliError::Input(format!(
                        "{}: no [controller] block to initialize from",
                        p.display()
                    )))
                }
            }
        }
        None => match &file.controller {
            Some(c) => {
                Some(desc::build_controller(c, plant.n_u(), plant.n_y()).map_err(CliError::Input)?)
            }
            None => None,
        },
    };
    let (k, value, report) = hinf_design(&plant, k_init.as_ref(), syn.order, &opts)?;
    println!("strong H-infinity norm     {:.16e}", value);
    println!("iterations                 {}", report.iterations);
    print!("{}", desc::controller_fragment(&k));
    if let Some(out) = &syn.out {
        write_file(out, &desc::controller_fragment(&k))?;
    }
    Ok(())
}

fn cmd_info(path: &Path) -> Result<(), CliError> {
    let file = load(path)?;
    if let Some(d) = &file.ddae {
        let sys = desc::build_ddae(d).map_err(CliError::Input)?;
        let part = sys
            .partition()
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        println!("kind                       raw DDAE");
        println!("state dimension            {}", sys.n());
        println!("delays                     {:?}", sys.delays());
        println!("inputs / outputs           {} / {}", sys.n_w(), sys.n_z());
        println!("algebraic dimension        {}", part.u.ncols());
        return Ok(());
    }
    let Some(p) = &file.plant else {
        return Err(CliError::Input(
            "description declares neither [ddae] nor [plant]".into(),
        ));
    };
    let plant = desc::build_plant(p).map_err(CliError::Input)?;
    let k = declared_controller(&file, &plant)?;
    let sys = interconnect(&plant, &k, file.options.feedback_delay.unwrap_or(0.0))
        .map_err(|e| CliError::Input(e.to_string()))?;
    let part = sys
        .partition()
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    println!("kind                       plant + controller loop");
    println!("plant states               {}", plant.a.nrows());
    println!(
        "controls / measurements    {} / {}",
        plant.n_u(),
        plant.n_y()
    );
    println!("controller order           {}", k.order);
    println!("free parameters            {}", k.parameters().len());
    println!("closed-loop dimension      {}", sys.n());
    println!("closed-loop delays         {:?}", sys.delays());
    println!("algebraic dimension        {}", part.u.ncols());
    Ok(())
}
