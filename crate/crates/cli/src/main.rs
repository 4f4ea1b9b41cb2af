mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flipfree::admm::{write_csv, DiagnosticsRecord, SolverConfig, Solver};
use flipfree::energies::{conformal_init, tutte_disk, tutte_volume, EnergyKind};
use flipfree::mesh::{
    boundary_vertices, load_mesh, load_mesh_as, save_obj, save_obj_with_uv, save_tet, HandleConstraints,
    HandleSpec, Mesh, MeshFormat,
};
use flipfree::smallmat::Vector;
use flipfree_service::{ServiceError, SessionConfig};
use manifest::{Inputs, Metrics, RunManifest, RunStatus};

#[derive(Debug, Parser)]
#[command(name = "flipfree", version, about = "Flip-free distortion minimization for triangle and tet meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Computes a UV map of a disk-topology surface.
    Parametrize(ParametrizeArgs),
    /// Deforms a planar triangle mesh or a tet mesh to meet handle constraints.
    Deform(DeformArgs),
    /// Maps a tet mesh so its boundary lands on given target positions.
    Volmap(VolmapArgs),
    /// Removes inverted triangles from an existing UV map.
    Unflip(UnflipArgs),
    /// Starts the interactive deformation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Distortion energy: sg (symmetric gradient) or sd (symmetric Dirichlet).
    #[arg(long)]
    energy: Option<EnergyKind>,
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Solver configuration JSON, or a previous run's manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output mesh.
    #[arg(long, short)]
    out: PathBuf,
    /// Iteration log (CSV). Defaults to the output path with a .csv extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Run manifest (JSON). Defaults to `<out stem>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Init {
    Tutte,
    Conformal,
}

#[derive(Debug, Args)]
struct ParametrizeArgs {
    mesh: PathBuf,
    #[arg(long, value_enum, default_value = "tutte")]
    init: Init,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Debug, Args)]
struct DeformArgs {
    mesh: PathBuf,
    /// JSON array of `{"vertex": id, "position": [x, y(, z)]}`.
    #[arg(long)]
    handles: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Debug, Args)]
struct VolmapArgs {
    mesh: PathBuf,
    /// Target positions for every boundary vertex, in the handle format.
    #[arg(long)]
    target_boundary: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Debug, Args)]
struct UnflipArgs {
    /// OBJ with one texture coordinate per vertex.
    mesh: PathBuf,
    /// Optional UV pins, in the handle format.
    #[arg(long)]
    handles: Option<PathBuf>,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value = "sd")]
    energy: EnergyKind,
    /// Minimum interval between streamed updates.
    #[arg(long, default_value_t = 33)]
    throttle_ms: u64,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Other(String),
}

impl Failure {
    fn status(&self) -> RunStatus {
        match self {
            Self::Validation(_) => RunStatus::ValidationError,
            Self::Other(_) => RunStatus::Error,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Validation(m) | Self::Other(m) => m,
        }
    }
}

impl From<flipfree::Error> for Failure {
    fn from(e: flipfree::Error) -> Self {
        use flipfree::Error as E;
        match e {
            E::Io(_) | E::Factorization(_) => Self::Other(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

/// Errors while reading inputs are validation failures whatever their cause.
fn input<T>(r: flipfree::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Validation(e.to_string()))
}

struct Finished {
    status: RunStatus,
    history: Vec<DiagnosticsRecord>,
    wall_ms: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(RunStatus::ValidationError.exit_code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Parametrize(a) => {
            let inputs = Inputs {
                mesh: a.mesh.clone(),
                config: a.solve.config.clone(),
                ..Inputs::default()
            };
            batch("parametrize", inputs, &a.solve, |m| parametrize(&a, m))
        }
        Command::Deform(a) => {
            let inputs = Inputs {
                mesh: a.mesh.clone(),
                handles: Some(a.handles.clone()),
                config: a.solve.config.clone(),
                ..Inputs::default()
            };
            batch("deform", inputs, &a.solve, |m| deform(&a, m))
        }
        Command::Volmap(a) => {
            let inputs = Inputs {
                mesh: a.mesh.clone(),
                target_boundary: Some(a.target_boundary.clone()),
                config: a.solve.config.clone(),
                ..Inputs::default()
            };
            batch("volmap", inputs, &a.solve, |m| volmap(&a, m))
        }
        Command::Unflip(a) => {
            let inputs = Inputs {
                mesh: a.mesh.clone(),
                handles: a.handles.clone(),
                config: a.solve.config.clone(),
                ..Inputs::default()
            };
            batch("unflip", inputs, &a.solve, |m| unflip(&a, m))
        }
        Command::Serve(a) => serve(&a),
    }
}

/// Runs one batch command and records its outcome in the manifest and log.
fn batch(
    name: &str,
    inputs: Inputs,
    args: &SolveArgs,
    body: impl FnOnce(&mut RunManifest) -> Result<Finished, Failure>,
) -> ExitCode {
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.out.with_extension("manifest.json"));
    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    let mut manifest = RunManifest::new(name, inputs);

    match body(&mut manifest) {
        Ok(done) => {
            manifest.metrics = Some(Metrics::from_history(&done.history, done.wall_ms));
            manifest.set_status(done.status);
            match write_log(&log_path, &done.history) {
                Ok(()) => manifest.log = Some(log_path),
                Err(e) => {
                    manifest.set_status(RunStatus::Error);
                    manifest.error = Some(format!("cannot write log {}: {e}", log_path.display()));
                }
            }
            let m = manifest.metrics.as_ref().expect("set above");
            let energy = m.final_energy.map_or("inf".to_owned(), |e| format!("{e:.9e}"));
            println!(
                "{name}: {} after {} iterations, energy {energy}, {} flips (from {})",
                done.status_label(),
                m.iterations,
                m.flips,
                m.initial_flips
            );
        }
        Err(f) => {
            manifest.set_status(f.status());
            manifest.error = Some(f.message().to_owned());
        }
    }
    if let Some(e) = &manifest.error {
        eprintln!("error: {e}");
    }
    if let Err(e) = manifest.write(&manifest_path) {
        eprintln!("error: cannot write manifest {}: {e}", manifest_path.display());
        return ExitCode::from(RunStatus::Error.exit_code());
    }
    ExitCode::from(manifest.exit_code)
}

impl Finished {
    fn status_label(&self) -> &'static str {
        match self.status {
            RunStatus::Converged => "converged",
            RunStatus::MaxIter => "stopped at max-iter",
            RunStatus::Stalled => "stalled",
            RunStatus::ValidationError | RunStatus::Error => "failed",
        }
    }
}

fn write_log(path: &Path, history: &[DiagnosticsRecord]) -> std::io::Result<()> {
    write_csv(BufWriter::new(File::create(path)?), history)
}

/// Preset, replaced by `--config` when given, then individual flags.
fn resolve_config(preset: SolverConfig, args: &SolveArgs) -> Result<SolverConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => preset,
    };
    if let Some(e) = args.energy {
        cfg.energy = e;
    }
    if let Some(v) = args.eps_abs {
        cfg.eps_abs = v;
    }
    if let Some(v) = args.eps_rel {
        cfg.eps_rel = v;
    }
    if let Some(v) = args.max_iter {
        cfg.max_iter = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_config(path: &Path) -> Result<SolverConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    // a manifest carries its configuration under "config"
    if value.get("command").is_some() {
        value = value["config"].take();
    }
    serde_json::from_value(value).map_err(|e| validation(format!("{}: {e}", path.display())))
}

fn load_handles(path: &Path, mesh: &Mesh, dim: usize) -> Result<HandleConstraints, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read handles {}: {e}", path.display())))?;
    let specs: Vec<HandleSpec> =
        serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    input(HandleConstraints::new(&specs, mesh.num_vertices(), dim))
}

fn solve<const D: usize>(
    mesh: &Mesh,
    w0: Vec<Vector<D>>,
    handles: HandleConstraints,
    cfg: SolverConfig,
) -> Result<(Vec<Vector<D>>, Finished), Failure> {
    let start = Instant::now();
    let mut solver = Solver::<D>::new(mesh, w0, handles, cfg)?;
    solver.run()?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let out = solver.into_output();
    Ok((
        out.w,
        Finished {
            status: out.status.into(),
            history: out.history,
            wall_ms,
        },
    ))
}

fn to_uv(w: &[Vector<2>]) -> Vec<[f64; 2]> {
    w.iter().map(|p| [p[0], p[1]]).collect()
}

fn to_xyz<const D: usize>(w: &[Vector<D>]) -> Vec<[f64; 3]> {
    w.iter()
        .map(|p| {
            let mut q = [0.0; 3];
            q[..D].copy_from_slice(p.as_slice());
            q
        })
        .collect()
}

fn parametrize(a: &ParametrizeArgs, m: &mut RunManifest) -> Result<Finished, Failure> {
    let cfg = resolve_config(SolverConfig::with_energy(EnergyKind::SymmetricGradient), &a.solve)?;
    m.config = Some(cfg.clone());
    let mesh = input(load_mesh(&a.mesh))?;
    if mesh.element_dim() != 2 {
        return Err(validation("parametrize needs a triangle mesh"));
    }
    let w0 = match a.init {
        Init::Tutte => tutte_disk(&mesh)?,
        Init::Conformal => conformal_init(&mesh, None)?,
    };
    m.init = Some(format!("{:?}", a.init).to_lowercase());
    let (w, done) = solve(&mesh, w0, HandleConstraints::empty(), cfg)?;
    save_obj_with_uv(&a.solve.out, &mesh, &to_uv(&w))?;
    m.output = Some(a.solve.out.clone());
    Ok(done)
}

fn deform(a: &DeformArgs, m: &mut RunManifest) -> Result<Finished, Failure> {
    let cfg = resolve_config(SolverConfig::deformation(EnergyKind::SymmetricDirichlet), &a.solve)?;
    m.config = Some(cfg.clone());
    m.init = Some("identity".into());
    let mesh = input(load_mesh(&a.mesh))?;
    let dim = match (mesh.element_dim(), mesh.is_planar()) {
        (2, true) => 2,
        (3, _) => 3,
        _ => return Err(validation("deform needs a planar triangle mesh or a tet mesh")),
    };
    let handles = load_handles(&a.handles, &mesh, dim)?;
    if handles.is_empty() {
        return Err(validation("deformation needs at least one handle"));
    }
    let rest = mesh.vertices();
    let done = if dim == 2 {
        let w0 = rest.iter().map(|p| Vector::<2>::new(p[0], p[1])).collect();
        let (w, done) = solve(&mesh, w0, handles, cfg)?;
        save_obj(&a.solve.out, &mesh, &to_xyz(&w))?;
        done
    } else {
        let w0 = rest.iter().map(|p| Vector::<3>::from(*p)).collect();
        let (w, done) = solve(&mesh, w0, handles, cfg)?;
        save_tet(&a.solve.out, &mesh, &to_xyz(&w))?;
        done
    };
    m.output = Some(a.solve.out.clone());
    Ok(done)
}

fn volmap(a: &VolmapArgs, m: &mut RunManifest) -> Result<Finished, Failure> {
    let cfg = resolve_config(SolverConfig::volume(EnergyKind::SymmetricGradient), &a.solve)?;
    m.config = Some(cfg.clone());
    m.init = Some("harmonic".into());
    let mesh = input(load_mesh(&a.mesh))?;
    if mesh.element_dim() != 3 {
        return Err(validation("volmap needs a tet mesh"));
    }
    let handles = load_handles(&a.target_boundary, &mesh, 3)?;
    let boundary = input(boundary_vertices(&mesh))?;
    let given = handles.vertex_ids();
    let missing: Vec<usize> = boundary.iter().copied().filter(|v| given.binary_search(v).is_err()).collect();
    if !missing.is_empty() {
        return Err(validation(format!(
            "target boundary is missing {} of {} boundary vertices: {}",
            missing.len(),
            boundary.len(),
            list(&missing)
        )));
    }
    let interior: Vec<usize> = given.iter().copied().filter(|v| boundary.binary_search(v).is_err()).collect();
    if !interior.is_empty() {
        return Err(validation(format!(
            "target boundary lists {} interior vertices: {}",
            interior.len(),
            list(&interior)
        )));
    }
    let w0 = tutte_volume(&mesh, &handles)?;
    let (w, done) = solve(&mesh, w0, handles, cfg)?;
    save_tet(&a.solve.out, &mesh, &to_xyz(&w))?;
    m.output = Some(a.solve.out.clone());
    Ok(done)
}

fn list(ids: &[usize]) -> String {
    const SHOWN: usize = 50;
    let mut s: Vec<String> = ids.iter().take(SHOWN).map(usize::to_string).collect();
    if ids.len() > SHOWN {
        s.push("...".into());
    }
    s.join(", ")
}

fn unflip(a: &UnflipArgs, m: &mut RunManifest) -> Result<Finished, Failure> {
    let cfg = resolve_config(SolverConfig::unflip(EnergyKind::SymmetricGradient), &a.solve)?;
    m.config = Some(cfg.clone());
    m.init = Some("input-uv".into());
    let loaded = input(MeshFormat::from_path(&a.mesh).and_then(|f| load_mesh_as(&a.mesh, f)))?;
    let mesh = loaded.mesh;
    if mesh.element_dim() != 2 {
        return Err(validation("unflip needs a triangle mesh"));
    }
    let uv = loaded
        .uv
        .ok_or_else(|| validation(format!("{} has no per-vertex texture coordinates", a.mesh.display())))?;
    let handles = match &a.handles {
        Some(p) => load_handles(p, &mesh, 2)?,
        None => HandleConstraints::empty(),
    };
    let w0 = uv.iter().map(|p| Vector::<2>::new(p[0], p[1])).collect();
    let (w, done) = solve(&mesh, w0, handles, cfg)?;
    save_obj_with_uv(&a.solve.out, &mesh, &to_uv(&w))?;
    m.output = Some(a.solve.out.clone());
    Ok(done)
}

fn serve(a: &ServeArgs) -> ExitCode {
    let run = || -> Result<(), Failure> {
        let mesh = input(load_mesh(&a.mesh))?;
        let config = SessionConfig {
            solver: SolverConfig::deformation(a.energy),
            throttle: Duration::from_millis(a.throttle_ms),
            ..SessionConfig::default()
        };
        flipfree_service::run(SocketAddr::new(a.host, a.port), mesh, config).map_err(|e| match e {
            ServiceError::Io(e) => Failure::Other(e.to_string()),
            other => validation(other.to_string()),
        })
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.status().exit_code())
        }
    }
}
