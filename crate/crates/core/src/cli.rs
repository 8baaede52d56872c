//! `ipergo <subcommand> --spec file.json [--out dir] [--threads k]`.
//!
//! Every report embeds the input spec, the library version, the precision and the
//! tolerances used, and nothing time-dependent, so reruns are byte-identical.

use crate::circle::{default_precision, Angle, FixedPointAngle, RationalAngle};
use crate::correlation::{
    behrend_build, behrend_interval_set, integer_good_set_density, interval_correlation, is_ap3_free,
    rotation_good_set_density, skew_correlation_direct, skew_correlation_fourier, triple_ap_integral_with_cutoff,
    IntegerSetWindow, IntervalSet, DEFAULT_FOURIER_CUTOFF,
};
use crate::error::{Error, Result};
use crate::ipset::{DensityReport, FolnerSchedule, GeneratorSequence, IpWindow, Mode};
use crate::spectral::{
    classify_convergence, construct_divergence_witness, omega, rational_spectrum_certificate, spectrum_contains,
    witness_report, DEFAULT_WITNESS_BOUND,
};
use crate::systems::{
    equidistribution_defect, met_rational_limit, multiple_average, weight_1r_phi, weighted_multiple_average,
    Evaluation, FiniteRotation, Observable, Point, SkewProduct, SystemModel, TorusRotation, TrigPolynomial,
};
use crate::uniformity::{
    average_control_check, cubic_integral, fixed_seminorm, measurecontrol_check, vdc_finite_check, FLOAT_SLACK,
};
use clap::{Args, Parser, Subcommand};
use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "ipergo", version, about = "Averages, spectra and correlations along IP sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for `<subcommand>.json` (and `.csv` where listed); stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 gives bit-exact reruns.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Limit of the product formula at one angle.
    Omega(Common),
    /// Convergence verdict for the character averages at one angle.
    Classify(Common),
    /// Spectrum membership of rational angles.
    Spectrum(Common),
    /// Divergence witness sequence and its replay.
    Witness(Common),
    /// Multiple (optionally weighted) ergodic averages. CSV: N,value_re,value_im,stderr
    Average(Common),
    /// Equidistribution defect of one character. CSV: N,defect
    Equi(Common),
    /// Fixed-input IP seminorm. CSV: N,value
    Seminorm(Common),
    /// Cubic-measure integral.
    Cubic(Common),
    /// Seminorm or multiple-average control inequality; exit 2 when it fails.
    ControlCheck(Common),
    /// Finite van der Corput inequality; exit 2 when it fails.
    VdcCheck(Common),
    /// Interval and skew-product correlations at a single n.
    Correlate(Common),
    /// Good-return densities. CSV: N,good_fraction,stderr
    Density(Common),
    /// Behrend set and its triple-progression integral.
    Behrend(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Omega(c) => ("omega", c),
            Command::Classify(c) => ("classify", c),
            Command::Spectrum(c) => ("spectrum", c),
            Command::Witness(c) => ("witness", c),
            Command::Average(c) => ("average", c),
            Command::Equi(c) => ("equi", c),
            Command::Seminorm(c) => ("seminorm", c),
            Command::Cubic(c) => ("cubic", c),
            Command::ControlCheck(c) => ("control-check", c),
            Command::VdcCheck(c) => ("vdc-check", c),
            Command::Correlate(c) => ("correlate", c),
            Command::Density(c) => ("density", c),
            Command::Behrend(c) => ("behrend", c),
        }
    }
}

/// Failure of a run, split by exit status.
#[derive(Debug)]
pub enum RunError {
    Spec { path: String, message: String },
    Library(Error),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Spec { path, message } => write!(f, "invalid spec at {path}: {message}"),
            RunError::Library(e) => write!(f, "{e}"),
            RunError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Library(e)
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

/// Output of one run: the JSON report, an optional CSV, and whether a check held.
#[derive(Debug)]
pub struct Outcome {
    pub report: String,
    pub csv: Option<String>,
    pub holds: bool,
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (kind, common) = cli.command.parts();
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("warning: thread pool already set: {e}");
        }
    }
    let text = match std::fs::read_to_string(&common.spec) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.spec.display());
            return 1;
        }
    };
    match run(kind, &text) {
        Ok(out) => match write_outputs(kind, &out, common.out.as_deref()) {
            Ok(()) => {
                if out.holds {
                    0
                } else {
                    2
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_outputs(kind: &str, out: &Outcome, dir: Option<&Path>) -> RunResult<()> {
    let io = |e: std::io::Error| RunError::Io(e.to_string());
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(io)?;
            std::fs::write(d.join(format!("{kind}.json")), &out.report).map_err(io)?;
            if let Some(csv) = &out.csv {
                std::fs::write(d.join(format!("{kind}.csv")), csv).map_err(io)?;
            }
        }
        None => print!("{}", out.report),
    }
    Ok(())
}

/// Parses `text` as a spec of the given kind and runs it.
pub fn run(kind: &str, text: &str) -> RunResult<Outcome> {
    let spec: Value = serde_json::from_str(text).map_err(|e| RunError::Spec {
        path: ".".into(),
        message: e.to_string(),
    })?;
    let Value::Object(mut body) = spec.clone() else {
        return Err(RunError::Spec {
            path: ".".into(),
            message: "spec must be a JSON object".into(),
        });
    };
    if let Some(k) = body.remove("kind") {
        if k.as_str() != Some(kind) {
            return Err(RunError::Spec {
                path: ".kind".into(),
                message: format!("spec is for {k}, not {kind}"),
            });
        }
    }
    body.remove("description");
    let precision = match body.remove("precision") {
        None => default_precision(),
        Some(v) => v
            .as_u64()
            .filter(|&p| (128..=1 << 20).contains(&p))
            .ok_or_else(|| RunError::Spec {
                path: ".precision".into(),
                message: "precision must be an integer in 128..=2^20".into(),
            })? as u32,
    };
    let ctx = Ctx { precision };
    let body = Value::Object(body);
    let (result, tolerances, csv, holds) = match kind {
        "omega" => ctx.omega(parse(body)?)?,
        "classify" => ctx.classify(parse(body)?)?,
        "spectrum" => ctx.spectrum(parse(body)?)?,
        "witness" => ctx.witness(parse(body)?)?,
        "average" => ctx.average(parse(body)?)?,
        "equi" => ctx.equi(parse(body)?)?,
        "seminorm" => ctx.seminorm(parse(body)?)?,
        "cubic" => ctx.cubic(parse(body)?)?,
        "control-check" => ctx.control(parse(body)?)?,
        "vdc-check" => ctx.vdc(parse(body)?)?,
        "correlate" => ctx.correlate(parse(body)?)?,
        "density" => ctx.density(parse(body)?)?,
        "behrend" => ctx.behrend(parse(body)?)?,
        other => {
            return Err(RunError::Spec {
                path: ".kind".into(),
                message: format!("unknown kind {other}"),
            })
        }
    };
    let report = json!({
        "tool": "ipergo",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": kind,
        "precision": precision,
        "spec": spec,
        "tolerances": tolerances,
        "result": result,
    });
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| RunError::Io(e.to_string()))?;
    text.push('\n');
    Ok(Outcome {
        report: text,
        csv,
        holds,
    })
}

fn parse<T: DeserializeOwned>(v: Value) -> RunResult<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let raw = e.path().to_string();
        let mut path = if raw == "." { String::new() } else { format!(".{raw}") };
        let message = e.inner().to_string();
        if let Some(rest) = message.strip_prefix("missing field `") {
            if let Some(field) = rest.split('`').next() {
                path.push('.');
                path.push_str(field);
            }
        }
        if path.is_empty() {
            path.push('.');
        }
        RunError::Spec { path, message }
    })
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report values serialize")
}

type Produced = (Value, Value, Option<String>, bool);

// ---- spec fragments ----

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum Num {
    Int(u64),
    Text(String),
}

impl Num {
    fn big(&self) -> Result<BigUint> {
        match self {
            Num::Int(n) => Ok(BigUint::from(*n)),
            Num::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("not a natural number: {s}"))),
        }
    }
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum SignedNum {
    Int(i64),
    Text(String),
}

impl SignedNum {
    fn big(&self) -> Result<BigInt> {
        match self {
            SignedNum::Int(n) => Ok(BigInt::from(*n)),
            SignedNum::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("not an integer: {s}"))),
        }
    }
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum AngleSpec {
    Pair([i64; 2]),
    Rational { rational: (i64, u64) },
    Fixed { fixed: String, bits: u32 },
    Named { named: String, bits: Option<u32> },
    Radians { radians: (i64, u64), bits: Option<u32> },
    Decimal { decimal: String, bits: Option<u32> },
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum GensSpec {
    Geometric { geometric: u64 },
    Explicit { explicit: Vec<Num> },
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum ScheduleSpec {
    Interval { interval: usize },
    Increasing { increasing: IncreasingSpec },
    Windows { windows: Vec<Vec<usize>> },
}

#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct IncreasingSpec {
    start: usize,
    scale: usize,
    #[serde(default)]
    offset: i64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Interval { interval: 1 }
    }
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum ComplexSpec {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexSpec {
    fn value(&self) -> Complex64 {
        match *self {
            ComplexSpec::Real(r) => Complex64::new(r, 0.0),
            ComplexSpec::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Deserialize, Debug, Clone)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum SystemSpec {
    Finite {
        m: u64,
        #[serde(default = "one_u64")]
        step: u64,
    },
    Torus {
        alpha: Vec<AngleSpec>,
    },
    Skew {
        alpha: AngleSpec,
    },
}

fn one_u64() -> u64 {
    1
}

#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct TermSpec {
    k: Vec<i64>,
    c: ComplexSpec,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ObservableSpec {
    Values(Vec<ComplexSpec>),
    Trig(Vec<TermSpec>),
    Character(i64),
    Indicator(SetSpec),
}

#[derive(Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
struct SetSpec {
    #[serde(default)]
    arcs: Vec<(f64, f64)>,
    #[serde(default)]
    rational_arcs: Vec<((i64, u64), (i64, u64))>,
    #[serde(default)]
    behrend: Option<u64>,
}

#[derive(Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum PointSpec {
    #[default]
    Mean,
    Residue(u64),
    Torus(Vec<AngleSpec>),
    Skew(AngleSpec, AngleSpec),
}

// ---- per-kind specs ----

fn default_horizon() -> usize {
    30
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct OmegaSpec {
    gens: GensSpec,
    #[serde(default)]
    schedule: ScheduleSpec,
    angle: AngleSpec,
    #[serde(default = "default_horizon")]
    horizon: usize,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SpectrumSpec {
    gens: GensSpec,
    #[serde(default)]
    angles: Vec<(i64, u64)>,
    #[serde(default)]
    q_max: Option<u64>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct WitnessSpec {
    angle: AngleSpec,
    j_max: usize,
    #[serde(default = "default_bound")]
    bound: u64,
}

fn default_bound() -> u64 {
    DEFAULT_WITNESS_BOUND
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct AverageSpec {
    system: SystemSpec,
    observables: Vec<ObservableSpec>,
    #[serde(default)]
    multipliers: Option<Vec<i64>>,
    #[serde(default)]
    at: PointSpec,
    #[serde(default)]
    weight_r: Option<u64>,
    gens: GensSpec,
    #[serde(default)]
    schedule: ScheduleSpec,
    ns: Vec<usize>,
    #[serde(default)]
    mode: Mode,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct EquiSpec {
    alpha: AngleSpec,
    #[serde(default = "one_i64")]
    m: i64,
    gens: GensSpec,
    #[serde(default)]
    schedule: ScheduleSpec,
    ns: Vec<usize>,
}

fn one_i64() -> i64 {
    1
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SeminormSpec {
    system: SystemSpec,
    observable: ObservableSpec,
    k: u32,
    gens: GensSpec,
    #[serde(default)]
    schedule: ScheduleSpec,
    n: usize,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct CubicSpec {
    system: SystemSpec,
    observable: ObservableSpec,
    k: u32,
}

#[derive(Deserialize, Debug)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
enum ControlSpec {
    Measure {
        system: SystemSpec,
        observable: ObservableSpec,
        k: u32,
        gens: GensSpec,
        #[serde(default)]
        schedule: ScheduleSpec,
        n: usize,
    },
    Average {
        system: SystemSpec,
        observables: Vec<ObservableSpec>,
        multipliers: Vec<i64>,
        gens: GensSpec,
        #[serde(default)]
        schedule: ScheduleSpec,
        n: usize,
    },
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct VdcSpec {
    gens: GensSpec,
    #[serde(default)]
    schedule: ScheduleSpec,
    n: usize,
    m: usize,
    xs: XsSpec,
}

#[derive(Deserialize, Debug)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum XsSpec {
    /// Seeded uniform entries in the unit square, one stream per sum.
    Random { seed: u64, dim: usize },
    /// Explicit values; sums not listed map to zero.
    Table(Vec<(Num, Vec<ComplexSpec>)>),
}

#[derive(Deserialize, Debug)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum CorrelateSpec {
    Interval {
        set: SetSpec,
        shifts: Vec<AngleSpec>,
    },
    SkewDirect {
        set: SetSpec,
        alpha: AngleSpec,
        n: SignedNum,
        #[serde(default = "default_pair")]
        multipliers: Vec<i64>,
    },
    SkewFourier {
        set: SetSpec,
        alpha: AngleSpec,
        n: SignedNum,
        #[serde(default = "default_cutoff")]
        cutoff: usize,
    },
    TripleAp {
        set: SetSpec,
        #[serde(default = "default_cutoff")]
        cutoff: usize,
    },
}

fn default_pair() -> Vec<i64> {
    vec![1, 2]
}

fn default_cutoff() -> usize {
    DEFAULT_FOURIER_CUTOFF
}

#[derive(Deserialize, Debug)]
#[serde(tag = "system", rename_all = "snake_case", deny_unknown_fields)]
enum DensitySpec {
    Rotation {
        set: SetSpec,
        alpha: AngleSpec,
        multipliers: (i64, i64),
        epsilon: f64,
        gens: GensSpec,
        #[serde(default)]
        schedule: ScheduleSpec,
        ns: Vec<usize>,
        #[serde(default)]
        mode: Mode,
    },
    Integer {
        set: IntegerSetSpec,
        multipliers: (i64, i64),
        #[serde(default)]
        third: Option<i64>,
        epsilon: f64,
        window: usize,
        gens: GensSpec,
        #[serde(default)]
        schedule: ScheduleSpec,
        ns: Vec<usize>,
        #[serde(default)]
        mode: Mode,
    },
}

/// `E ∩ [0, len)` as residues modulo `modulus` (declared periodic) or as a member list.
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct IntegerSetSpec {
    len: usize,
    #[serde(default)]
    modulus: Option<u64>,
    #[serde(default)]
    residues: Vec<u64>,
    #[serde(default)]
    members: Vec<usize>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct BehrendSpec {
    l: u64,
    #[serde(default = "default_cutoff")]
    cutoff: usize,
    #[serde(default)]
    list_members: bool,
}

// ---- conversion and dispatch ----

struct Ctx {
    precision: u32,
}

impl Ctx {
    fn angle(&self, a: &AngleSpec) -> Result<Angle> {
        let bits = |b: &Option<u32>| b.unwrap_or(self.precision);
        match a {
            AngleSpec::Pair([n, d]) => {
                if *d <= 0 {
                    return Err(Error::InvalidInput("angle denominator must be positive".into()));
                }
                Angle::rational(*n, *d as u64)
            }
            AngleSpec::Rational { rational: (n, d) } => Angle::rational(*n, *d),
            AngleSpec::Fixed { fixed, bits } => Ok(Angle::Fixed(FixedPointAngle::from_hex(fixed, *bits)?)),
            AngleSpec::Named { named, bits: b } => match named.as_str() {
                "golden" => Ok(Angle::Fixed(FixedPointAngle::golden(bits(b)))),
                "sqrt2m1" => Ok(Angle::Fixed(FixedPointAngle::sqrt2_minus_1(bits(b)))),
                other => Err(Error::InvalidInput(format!(
                    "unknown named angle {other}; use golden or sqrt2m1"
                ))),
            },
            AngleSpec::Radians {
                radians: (n, d),
                bits: b,
            } => Ok(Angle::Fixed(FixedPointAngle::from_radians(*n, *d, bits(b))?)),
            AngleSpec::Decimal { decimal, bits: b } => {
                let (num, den) = parse_decimal(decimal)?;
                Ok(Angle::Fixed(FixedPointAngle::from_ratio(&num, &den, bits(b))?))
            }
        }
    }

    fn fixed(&self, a: &AngleSpec) -> Result<FixedPointAngle> {
        match self.angle(a)? {
            Angle::Fixed(f) => Ok(f),
            Angle::Rational(r) => Ok(r.to_fixed(self.precision)),
        }
    }

    fn gens(&self, g: &GensSpec) -> Result<GeneratorSequence> {
        match g {
            GensSpec::Geometric { geometric } => GeneratorSequence::geometric(*geometric),
            GensSpec::Explicit { explicit } => {
                GeneratorSequence::explicit(explicit.iter().map(Num::big).collect::<Result<_>>()?)
            }
        }
    }

    fn schedule(&self, s: &ScheduleSpec) -> Result<FolnerSchedule> {
        match s {
            ScheduleSpec::Interval { interval } => FolnerSchedule::increasing(*interval, 1, 0),
            ScheduleSpec::Increasing { increasing: i } => FolnerSchedule::increasing(i.start, i.scale, i.offset),
            ScheduleSpec::Windows { windows } => Ok(FolnerSchedule::ExplicitWindows(windows.clone())),
        }
    }

    fn system(&self, s: &SystemSpec) -> Result<SystemModel> {
        match s {
            SystemSpec::Finite { m, step } => Ok(SystemModel::Finite(FiniteRotation::new(*m, *step)?)),
            SystemSpec::Torus { alpha } => Ok(SystemModel::Torus(TorusRotation::new(
                alpha.iter().map(|a| self.angle(a)).collect::<Result<_>>()?,
            )?)),
            SystemSpec::Skew { alpha } => Ok(SystemModel::Skew(SkewProduct::new(self.fixed(alpha)?))),
        }
    }

    fn observable(&self, sys: &SystemModel, o: &ObservableSpec) -> Result<Observable> {
        match o {
            ObservableSpec::Values(v) => Ok(Observable::Values(v.iter().map(ComplexSpec::value).collect())),
            ObservableSpec::Trig(terms) => {
                let dim = match sys {
                    SystemModel::Torus(t) => t.dim(),
                    SystemModel::Skew(_) => 2,
                    SystemModel::Finite(_) => 1,
                };
                Ok(Observable::Trig(TrigPolynomial::new(
                    dim,
                    terms.iter().map(|t| (t.k.clone(), t.c.value())),
                )?))
            }
            ObservableSpec::Character(k) => Ok(Observable::Trig(TrigPolynomial::character(*k))),
            ObservableSpec::Indicator(s) => Ok(Observable::Indicator(self.set(s)?)),
        }
    }

    fn set(&self, s: &SetSpec) -> Result<IntervalSet> {
        let mut out = IntervalSet::from_turns(&s.arcs)?.union(&IntervalSet::from_rationals(&s.rational_arcs)?);
        if let Some(l) = s.behrend {
            out = out.union(&behrend_interval_set(&behrend_build(l)?)?);
        }
        Ok(out)
    }

    fn point(&self, p: &PointSpec) -> Result<Evaluation> {
        Ok(match p {
            PointSpec::Mean => Evaluation::Mean,
            PointSpec::Residue(x) => Evaluation::At(Point::Residue(*x)),
            PointSpec::Torus(v) => {
                Evaluation::At(Point::Torus(v.iter().map(|a| self.angle(a)).collect::<Result<_>>()?))
            }
            PointSpec::Skew(x, y) => Evaluation::At(Point::Skew(self.fixed(x)?, self.fixed(y)?)),
        })
    }

    fn omega(&self, s: OmegaSpec) -> RunResult<Produced> {
        let (g, sch, a) = (self.gens(&s.gens)?, self.schedule(&s.schedule)?, self.angle(&s.angle)?);
        let v = omega(&g, &sch, &a, s.horizon)?;
        Ok((to_value(&v), json!({}), None, true))
    }

    fn classify(&self, s: OmegaSpec) -> RunResult<Produced> {
        let (g, sch, a) = (self.gens(&s.gens)?, self.schedule(&s.schedule)?, self.angle(&s.angle)?);
        let v = classify_convergence(&g, &sch, &a, s.horizon)?;
        Ok((to_value(&v), json!({}), None, true))
    }

    fn spectrum(&self, s: SpectrumSpec) -> RunResult<Produced> {
        let g = self.gens(&s.gens)?;
        let mut decisions = Vec::new();
        for &(n, d) in &s.angles {
            let r = RationalAngle::new(n, d)?;
            let dec = spectrum_contains(&g, &r)?;
            decisions.push(json!({"angle": [n, d], "contains": dec.contains, "certificate": dec.certificate}));
        }
        let mut result = json!({"decisions": decisions});
        if let Some(q_max) = s.q_max {
            let mut inside = Vec::new();
            for q in 1..=q_max {
                if spectrum_contains(&g, &RationalAngle::new(1, q)?)?.contains {
                    inside.push(q);
                }
            }
            result["q_max"] = json!(q_max);
            result["denominators_in_spectrum"] = json!(inside);
        }
        if let Ok(cert) = rational_spectrum_certificate(&g) {
            result["rational_spectrum"] = to_value(&cert);
        }
        Ok((result, json!({}), None, true))
    }

    fn witness(&self, s: WitnessSpec) -> RunResult<Produced> {
        let a = self.fixed(&s.angle)?;
        let terms = construct_divergence_witness(&a, s.j_max, s.bound)?;
        let rep = witness_report(&a, &terms);
        let gens = GeneratorSequence::DivergenceWitness {
            angle: a.clone(),
            terms,
        };
        let verdict = classify_convergence(&gens, &FolnerSchedule::interval(1), &Angle::Fixed(a), s.j_max)?;
        Ok((
            json!({"report": rep, "verdict": verdict.tag()}),
            json!({"search_bound": s.bound}),
            None,
            true,
        ))
    }

    fn average(&self, s: AverageSpec) -> RunResult<Produced> {
        let sys = self.system(&s.system)?;
        let fs: Vec<Observable> = s
            .observables
            .iter()
            .map(|o| self.observable(&sys, o))
            .collect::<Result<_>>()?;
        let ls = s.multipliers.clone().unwrap_or_else(|| (1..=fs.len() as i64).collect());
        let ev = self.point(&s.at)?;
        let (g, sch) = (self.gens(&s.gens)?, self.schedule(&s.schedule)?);
        let weight = s.weight_r.map(|r| weight_1r_phi(&g, &sch, r)).transpose()?;
        let mut csv = String::from("N,value_re,value_im,stderr\n");
        let mut rows = Vec::new();
        for &n in &s.ns {
            let w = IpWindow::at(&g, &sch, n)?;
            let mode = s.mode.for_window(n);
            let est = match &weight {
                Some(wt) => weighted_multiple_average(&sys, &fs, &ls, wt, &ev, &w, mode)?,
                None => multiple_average(&sys, &fs, &ls, &ev, &w, mode)?,
            };
            let _ = writeln!(csv, "{},{},{},{}", n, est.mean.re, est.mean.im, est.stderr);
            rows.push(json!({"n": n, "re": est.mean.re, "im": est.mean.im, "stderr": est.stderr}));
        }
        let mut result = json!({"mode": s.mode.label(), "rows": rows});
        if let Some(wt) = weight {
            result["weight"] = json!({"r": wt.r, "denominator": wt.denominator});
        }
        if let (SystemModel::Finite(r), [Observable::Values(v)], [1]) = (&sys, fs.as_slice(), ls.as_slice()) {
            let lim = met_rational_limit(r, v, &g, &sch)?;
            result["rational_limit"] = json!(lim.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>());
        }
        Ok((result, json!({}), Some(csv), true))
    }

    fn equi(&self, s: EquiSpec) -> RunResult<Produced> {
        let a = self.angle(&s.alpha)?;
        let sys = TorusRotation::new(vec![a])?;
        let (g, sch) = (self.gens(&s.gens)?, self.schedule(&s.schedule)?);
        let mut csv = String::from("N,defect\n");
        let mut rows = Vec::new();
        for &n in &s.ns {
            let d = equidistribution_defect(&sys, s.m, &g, &sch, n)?;
            let _ = writeln!(csv, "{n},{d}");
            rows.push(json!({"n": n, "defect": d}));
        }
        Ok((json!({"rows": rows}), json!({}), Some(csv), true))
    }

    fn seminorm(&self, s: SeminormSpec) -> RunResult<Produced> {
        let sys = self.system(&s.system)?;
        let f = self.observable(&sys, &s.observable)?;
        let rep = fixed_seminorm(&sys, &f, s.k, &self.gens(&s.gens)?, &self.schedule(&s.schedule)?, s.n)?;
        let mut csv = String::from("N,value\n");
        for p in &rep.trace {
            let _ = writeln!(csv, "{},{}", p.n, p.value);
        }
        Ok((to_value(&rep), json!({}), Some(csv), true))
    }

    fn cubic(&self, s: CubicSpec) -> RunResult<Produced> {
        let sys = self.system(&s.system)?;
        let f = self.observable(&sys, &s.observable)?;
        let v = cubic_integral(&sys, &f, s.k)?;
        Ok((json!({"k": s.k, "value": v}), json!({}), None, true))
    }

    fn control(&self, s: ControlSpec) -> RunResult<Produced> {
        match s {
            ControlSpec::Measure {
                system,
                observable,
                k,
                gens,
                schedule,
                n,
            } => {
                let sys = self.system(&system)?;
                let f = self.observable(&sys, &observable)?;
                let r = measurecontrol_check(&sys, &f, k, &self.gens(&gens)?, &self.schedule(&schedule)?, n)?;
                Ok((to_value(&r), json!({"float_slack": FLOAT_SLACK}), None, r.holds))
            }
            ControlSpec::Average {
                system,
                observables,
                multipliers,
                gens,
                schedule,
                n,
            } => {
                let sys = self.system(&system)?;
                let fs: Vec<Observable> = observables
                    .iter()
                    .map(|o| self.observable(&sys, o))
                    .collect::<Result<_>>()?;
                let r = average_control_check(
                    &sys,
                    &fs,
                    &multipliers,
                    &self.gens(&gens)?,
                    &self.schedule(&schedule)?,
                    n,
                )?;
                Ok((to_value(&r), json!({"float_slack": FLOAT_SLACK}), None, r.holds))
            }
        }
    }

    fn vdc(&self, s: VdcSpec) -> RunResult<Produced> {
        let (g, sch) = (self.gens(&s.gens)?, self.schedule(&s.schedule)?);
        let r = match &s.xs {
            XsSpec::Random { seed, dim } => {
                let (seed, dim) = (*seed, *dim);
                vdc_finite_check(|n| random_vector(seed, n, dim), &g, &sch, s.n, s.m)?
            }
            XsSpec::Table(rows) => {
                let mut table = std::collections::HashMap::new();
                let mut dim = 0;
                for (k, v) in rows {
                    dim = dim.max(v.len());
                    table.insert(k.big()?, v.iter().map(ComplexSpec::value).collect::<Vec<_>>());
                }
                vdc_finite_check(
                    |n| {
                        table
                            .get(n)
                            .cloned()
                            .unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); dim])
                    },
                    &g,
                    &sch,
                    s.n,
                    s.m,
                )?
            }
        };
        Ok((to_value(&r), json!({"float_slack": FLOAT_SLACK}), None, r.holds))
    }

    fn correlate(&self, s: CorrelateSpec) -> RunResult<Produced> {
        let result = match s {
            CorrelateSpec::Interval { set, shifts } => {
                let a = self.set(&set)?;
                let ph: Vec<u64> = shifts
                    .iter()
                    .map(|x| self.angle(x).map(|a| a.phase_u64()))
                    .collect::<Result<_>>()?;
                json!({"measure": a.measure(), "value": interval_correlation(&a, &ph)})
            }
            CorrelateSpec::SkewDirect {
                set,
                alpha,
                n,
                multipliers,
            } => {
                let b = self.set(&set)?;
                let v = skew_correlation_direct(&b, &self.angle(&alpha)?, &n.big()?, &multipliers);
                json!({"measure": b.measure(), "value": v})
            }
            CorrelateSpec::SkewFourier { set, alpha, n, cutoff } => {
                let b = self.set(&set)?;
                let v = skew_correlation_fourier(&b, cutoff, &self.angle(&alpha)?, &n.big()?)?;
                json!({"measure": b.measure(), "value": v})
            }
            CorrelateSpec::TripleAp { set, cutoff } => {
                let b = self.set(&set)?;
                let t = triple_ap_integral_with_cutoff(&b, cutoff);
                json!({"measure": b.measure(), "measure_cubed": b.measure().powi(3), "value": t})
            }
        };
        Ok((result, json!({}), None, true))
    }

    fn density(&self, s: DensitySpec) -> RunResult<Produced> {
        let (rep, eps, extra) = match s {
            DensitySpec::Rotation {
                set,
                alpha,
                multipliers,
                epsilon,
                gens,
                schedule,
                ns,
                mode,
            } => {
                let a = self.set(&set)?;
                let rep = rotation_good_set_density(
                    &a,
                    &self.fixed(&alpha)?,
                    multipliers.0,
                    multipliers.1,
                    &self.gens(&gens)?,
                    &self.schedule(&schedule)?,
                    epsilon,
                    &ns,
                    mode,
                )?;
                (rep, epsilon, json!({"measure": a.measure()}))
            }
            DensitySpec::Integer {
                set,
                multipliers,
                third,
                epsilon,
                window,
                gens,
                schedule,
                ns,
                mode,
            } => {
                let e = integer_set(&set)?;
                let d = e.max_window_density(window)?;
                let rep = integer_good_set_density(
                    &e,
                    &self.gens(&gens)?,
                    &self.schedule(&schedule)?,
                    multipliers.0,
                    multipliers.1,
                    third,
                    epsilon,
                    window,
                    &ns,
                    mode,
                )?;
                (rep, epsilon, json!({"upper_density_estimate": d, "window": window}))
            }
        };
        let csv = density_csv(&rep);
        let result = json!({
            "rows": rep.rows,
            "tail_min": rep.tail_min,
            "tail_max": rep.tail_max,
            "set": extra,
            "note": "finite windows and one schedule only; no liminf over all schedules is claimed",
        });
        Ok((result, json!({"epsilon": eps}), Some(csv), true))
    }

    fn behrend(&self, s: BehrendSpec) -> RunResult<Produced> {
        let set = behrend_build(s.l)?;
        let b = behrend_interval_set(&set)?;
        let t = triple_ap_integral_with_cutoff(&b, s.cutoff);
        let mu = b.measure();
        let mut result = json!({
            "l": set.l,
            "size": set.members.len(),
            "digits": set.digits,
            "base": set.base,
            "dim": set.dim,
            "radius": set.radius,
            "ap3_free": is_ap3_free(&set.members),
            "measure": mu,
            "measure_cubed": mu.powi(3),
            "triple_ap": t,
            "ratio": t.sweep / mu.powi(3),
        });
        if s.list_members {
            result["members"] = json!(set.members);
        }
        Ok((result, json!({"cell_width": format!("1/(4*{})", s.l)}), None, true))
    }
}

fn density_csv(rep: &DensityReport) -> String {
    let mut csv = String::from("N,good_fraction,stderr\n");
    for r in &rep.rows {
        let _ = writeln!(csv, "{},{},{}", r.n, r.density, r.stderr);
    }
    csv
}

fn integer_set(s: &IntegerSetSpec) -> Result<IntegerSetWindow> {
    match s.modulus {
        Some(q) => {
            if q == 0 {
                return Err(Error::InvalidInput("modulus must be positive".into()));
            }
            let e = IntegerSetWindow::from_fn(s.len, |x| s.residues.contains(&(x % q)))?;
            if (q as usize) < s.len {
                e.with_period(q)
            } else {
                Ok(e)
            }
        }
        None => {
            let mut bits = vec![false; s.len];
            for &m in &s.members {
                if m >= s.len {
                    return Err(Error::InvalidInput(format!("member {m} outside [0, {})", s.len)));
                }
                bits[m] = true;
            }
            IntegerSetWindow::new(bits)
        }
    }
}

fn random_vector(seed: u64, n: &BigUint, dim: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n.iter_u64_digits().next().unwrap_or(0));
    (0..dim)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Exact `(num, den)` of a decimal string such as `0.6180339887`.
fn parse_decimal(s: &str) -> Result<(BigUint, BigUint)> {
    let bad = || Error::InvalidInput(format!("not a nonnegative decimal: {s}"));
    let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let num: BigUint = digits.parse().map_err(|_| bad())?;
    Ok((num, BigUint::from(10u32).pow(frac.len() as u32)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status(kind: &str, spec: &str) -> std::result::Result<Value, String> {
        run(kind, spec)
            .map(|o| serde_json::from_str(&o.report).unwrap())
            .map_err(|e| e.to_string())
    }

    #[test]
    fn minimal_omega() {
        let v = status(
            "omega",
            r#"{"kind": "omega", "gens": {"geometric": 10}, "angle": [1, 3]}"#,
        )
        .unwrap();
        assert_eq!(v["result"]["status"], "ExactZero");
    }

    #[test]
    fn missing_gens_reports_path() {
        let e = status("omega", r#"{"angle": [1, 3]}"#).unwrap_err();
        assert!(e.contains(".gens"), "{e}");
        let e = status(
            "average",
            r#"{"system": {"finite": {}}, "observables": [], "gens": {"geometric": 10}, "ns": [1]}"#,
        )
        .unwrap_err();
        assert!(e.contains(".system.finite.m"), "{e}");
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        assert!(status(
            "omega",
            r#"{"kind": "cubic", "gens": {"geometric": 10}, "angle": [1, 3]}"#
        )
        .is_err());
    }

    #[test]
    fn decimal_parsing() {
        let (n, d) = parse_decimal("0.6180339887").unwrap();
        assert_eq!(n, BigUint::from(6180339887u64));
        assert_eq!(d, BigUint::from(10_000_000_000u64));
        assert!(parse_decimal("1.2.3").is_err());
    }

    #[test]
    fn vdc_check_holds_on_random_vectors() {
        let o = run(
            "vdc-check",
            r#"{"gens": {"geometric": 10}, "n": 6, "m": 2, "xs": {"random": {"seed": 1, "dim": 2}}}"#,
        )
        .unwrap();
        assert!(o.holds);
    }
}
