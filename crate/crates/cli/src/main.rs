//! `collatz-lab`: orbits, equivalence classes and verification batteries
//! for generalized Collatz maps.
//!
//! Exit codes: 0 all checks pass, 1 a violation was found, 2 something was
//! inconclusive, 3 bad input.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use collatz_lab::conditions::{ck_for_section, cuntz_krieger_condition, separating_condition, WitnessTable};
use collatz_lab::dynamics::{check_reduction_necessary, check_reduction_sufficient, classes, verify_convergence, FirstReturnMap};
use collatz_lab::families::{
    collatz, image_of_n1, verify_mersenne_identities, verify_mersenne_orbit_meets_section, verify_q5_group, Preset,
    PresetName,
};
use collatz_lab::operator::{
    build_branch_ops, build_section_ops, descent_check, norm_bound_check, span_vs_class, verify_branch_relations,
    verify_section_relations, BasisWindow,
};
use collatz_lab::orbit::orbit;
use collatz_lab::{section_pair_from_toml, GCMap, Section, Status, SCHEMA_VERSION};
use num_bigint::BigUint;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "collatz-lab", version, about = "Exact experiments on generalized Collatz maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate a map from `n` and report the orbit.
    Orbit {
        /// Preset (collatz, identity, qx1:<q>, 3xd:<d>, mersenne:<k>) or map file.
        map: String,
        n: String,
        #[arg(long, default_value_t = 10_000)]
        fuel: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Run a verification battery.
    Verify {
        map: String,
        /// bounded, separating:<x>, ck, section, relations, span, descent,
        /// modular, range or norm.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 10_000)]
        window: u64,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
        /// Word-length bound for span searches; defaults to the window size.
        #[arg(long)]
        depth: Option<usize>,
        /// Number of starts for the span suite.
        #[arg(long, default_value_t = 1_000)]
        starts: u64,
        #[arg(long, default_value_t = 1_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Section pair file with `[n1]` and `[n2]` tables.
        #[arg(long)]
        section: Option<PathBuf>,
        /// Witness table file.
        #[arg(long)]
        witnesses: Option<PathBuf>,
        /// For the ck suite: test the map's own branch partition.
        #[arg(long)]
        partition: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Partition `1..=window` into equivalence classes.
    Classes {
        map: String,
        #[arg(long)]
        window: u64,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

struct InputError(String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    map: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    suite: Option<&'a str>,
    status: Status,
    report: T,
}

/// A finished report, rendered.
struct Output {
    status: Status,
    text: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors; help and version are not errors
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Orbit { map, n, fuel, format } => run_orbit(&map, &n, fuel, format),
        Command::Verify {
            map,
            suite,
            window,
            fuel,
            depth,
            starts,
            trials,
            seed,
            threads,
            section,
            witnesses,
            partition,
            format,
        } => {
            let opts = VerifyOpts {
                window,
                fuel,
                depth,
                starts,
                trials,
                seed,
                threads,
                section,
                witnesses,
                partition,
            };
            run_verify(&map, &suite, &opts, format)
        }
        Command::Classes { map, window, fuel, format } => run_classes(&map, window, fuel, format),
    };
    match result {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.text);
            ExitCode::from(match out.status {
                Status::Pass => 0,
                Status::Fail => 1,
                Status::Inconclusive => 2,
            })
        }
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn emit<T: Serialize>(
    command: &str,
    map: &str,
    suite: Option<&str>,
    status: Status,
    report: T,
    csv: Option<String>,
    format: Format,
) -> Result<Output, InputError> {
    if format == Format::Csv {
        let csv = csv.ok_or_else(|| InputError(format!("no CSV rendering for {}", suite.unwrap_or(command))))?;
        return Ok(Output { status, text: csv.trim_end().to_owned() });
    }
    let env = Envelope { schema_version: SCHEMA_VERSION, command, map, suite, status, report };
    Ok(Output { status, text: serde_json::to_string_pretty(&env)? })
}

fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String, InputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| InputError(e.to_string()))?)?)
}

/// Resolves a preset name or a map definition file.
fn load(map_ref: &str) -> Result<Preset, InputError> {
    match map_ref.parse::<PresetName>() {
        Ok(name) => Ok(name.build()?),
        Err(preset_err) => {
            let path = Path::new(map_ref);
            if path.is_file() {
                let map = GCMap::from_file(path)?;
                Ok(Preset { map, section: None, witnesses: None, periodic_point: 1 })
            } else {
                Err(InputError(format!("{preset_err}, and no such map file")))
            }
        }
    }
}

fn positive(what: &str, v: u64) -> Result<u64, InputError> {
    if v == 0 {
        Err(InputError(format!("{what} must be positive")))
    } else {
        Ok(v)
    }
}

fn run_orbit(map_ref: &str, n: &str, fuel: u64, format: Format) -> Result<Output, InputError> {
    let preset = load(map_ref)?;
    let start: BigUint = n.parse().map_err(|_| InputError(format!("not a positive integer: {n}")))?;
    if start == BigUint::from(0u32) {
        return Err(InputError("orbits start at a positive integer".into()));
    }
    let rec = orbit(&preset.map, &start, fuel);
    let status = if rec.is_complete() { Status::Pass } else { Status::Inconclusive };
    #[derive(Serialize)]
    #[serde(rename_all = "camelCase")]
    struct OrbitReport<'a> {
        #[serde(flatten)]
        record: &'a collatz_lab::OrbitRecord,
        stopping_time: Option<usize>,
        canonical_cycle: Option<Vec<String>>,
    }
    let report = OrbitReport {
        record: &rec,
        stopping_time: rec.index_of_one(),
        canonical_cycle: rec.cycle_canonical().map(|c| c.iter().map(|v| v.to_string()).collect()),
    };
    #[derive(Serialize)]
    struct Row {
        index: usize,
        value: String,
    }
    let csv = to_csv(rec.prefix.iter().enumerate().map(|(index, v)| Row { index, value: v.to_string() }))?;
    emit("orbit", preset.map.name(), None, status, report, Some(csv), format)
}

fn run_classes(map_ref: &str, window: u64, fuel: u64, format: Format) -> Result<Output, InputError> {
    let preset = load(map_ref)?;
    positive("window", window)?;
    let report = classes(&preset.map, window, fuel);
    #[derive(Serialize)]
    struct Row {
        representative: u64,
        size: usize,
        resolved: bool,
        cycle: String,
    }
    let csv = to_csv(report.classes.iter().map(|c| Row {
        representative: c.representative,
        size: c.size,
        resolved: c.resolved,
        cycle: c.cycle.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
    }))?;
    emit("classes", preset.map.name(), None, report.status(), &report, Some(csv), format)
}

struct VerifyOpts {
    window: u64,
    fuel: u64,
    depth: Option<usize>,
    starts: u64,
    trials: u64,
    seed: u64,
    threads: usize,
    section: Option<PathBuf>,
    witnesses: Option<PathBuf>,
    partition: bool,
}

fn section_of(preset: &Preset, opts: &VerifyOpts) -> Result<(Section, Section), InputError> {
    if let Some(path) = &opts.section {
        let text = std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        return Ok(section_pair_from_toml(&text)?);
    }
    preset
        .section
        .clone()
        .ok_or_else(|| InputError(format!("{} has no preset section; pass --section", preset.map.name())))
}

fn witnesses_of(preset: &Preset, opts: &VerifyOpts, n1: &Section, n2: &Section) -> Result<WitnessTable, InputError> {
    if let Some(path) = &opts.witnesses {
        return Ok(WitnessTable::from_file(path)?);
    }
    if opts.section.is_none() {
        if let Some(w) = &preset.witnesses {
            return Ok(w.clone());
        }
    }
    Ok(WitnessTable::generate(n1, n2)?)
}

fn run_verify(map_ref: &str, suite: &str, opts: &VerifyOpts, format: Format) -> Result<Output, InputError> {
    let preset = load(map_ref)?;
    positive("window", opts.window)?;
    let map = &preset.map;
    let name = map.name().to_owned();
    let out = |status: Status, report: &dyn erased::Report, csv: Option<String>| {
        emit("verify", &name, Some(suite), status, erased::Wrap(report), csv, format)
    };

    if let Some(x) = suite.strip_prefix("separating:") {
        let x: BigUint = x.parse().map_err(|_| InputError(format!("not a positive integer: {x}")))?;
        return match separating_condition(map, &x, opts.fuel) {
            Ok(w) => {
                let status = if w.aperiodic { Status::Pass } else { Status::Fail };
                out(status, &w, None)
            }
            Err(e) => {
                #[derive(Serialize)]
                struct NotPeriodic {
                    point: String,
                    error: String,
                }
                out(Status::Inconclusive, &NotPeriodic { point: x.to_string(), error: e.to_string() }, None)
            }
        };
    }

    match suite {
        "bounded" => {
            let r = map.validate();
            let status = if r.passed() { Status::Pass } else { Status::Fail };
            let csv = to_csv(&r.checks)?;
            out(status, &r, Some(csv))
        }
        "ck" if opts.partition || (preset.section.is_none() && opts.section.is_none()) => {
            let r = cuntz_krieger_condition(map)?;
            out(r.status(), &r, None)
        }
        "ck" => {
            let (n1, n2) = section_of(&preset, opts)?;
            let w = witnesses_of(&preset, opts, &n1, &n2)?;
            let r = ck_for_section(map, &n1, &n2, &w, opts.window, opts.fuel)?;
            out(r.status, &r, None)
        }
        "section" => {
            let (n1, n2) = section_of(&preset, opts)?;
            let sigma = n1.union(&n2)?;
            #[derive(Serialize)]
            #[serde(rename_all = "camelCase")]
            struct SectionReport {
                n1: String,
                n2: String,
                image_of_n1: String,
                image_matches: bool,
                meets_section: collatz_lab::dynamics::MeetsSectionReport,
                periodic_point: collatz_lab::dynamics::PeriodicPointReport,
                classes_of_f: usize,
                classes_of_p: usize,
                single_class_agrees: bool,
            }
            let image = image_of_n1(map, &n1)?;
            let meets = check_reduction_sufficient(map, &sigma, opts.window, opts.fuel);
            let point = BigUint::from(preset.periodic_point);
            let periodic = check_reduction_necessary(map, &sigma, &point, opts.fuel)?;
            let cf = classes(map, opts.window, opts.fuel);
            let p = FirstReturnMap::on_pair(map.clone(), &n1, &n2, opts.fuel);
            let cp = classes(&p, opts.window, opts.fuel);
            let agrees = (cf.class_count == 1) == (cp.class_count == 1);
            let status = [
                if image == n2 { Status::Pass } else { Status::Fail },
                meets.status,
                periodic.status,
                cf.status(),
                cp.status(),
                if agrees { Status::Pass } else { Status::Fail },
            ]
            .into_iter()
            .collect();
            let r = SectionReport {
                n1: n1.to_string(),
                n2: n2.to_string(),
                image_of_n1: image.to_string(),
                image_matches: image == n2,
                meets_section: meets,
                periodic_point: periodic,
                classes_of_f: cf.class_count,
                classes_of_p: cp.class_count,
                single_class_agrees: agrees,
            };
            out(status, &r, None)
        }
        "relations" => {
            let (n1, n2) = section_of(&preset, opts)?;
            let sigma = n1.union(&n2)?;
            let w = BasisWindow::from_section(&sigma, opts.window);
            let ops = build_section_ops(map, &n1, &n2, &w, opts.fuel)?;
            let section = verify_section_relations(&ops, &n1);
            let branch = verify_branch_relations(map, &build_branch_ops(map, &BasisWindow::range(opts.window)));
            #[derive(Serialize)]
            #[serde(rename_all = "camelCase")]
            struct Relations {
                section: collatz_lab::RelationReport,
                branch: collatz_lab::RelationReport,
                inconclusive_columns: Vec<u64>,
            }
            let status = section.status.and(branch.status);
            #[derive(Serialize)]
            struct Row<'a> {
                family: &'a str,
                identity: &'a str,
                checked: usize,
                mismatches: usize,
                status: Status,
            }
            let rows = section.identities.iter().map(|c| ("section", c)).chain(branch.identities.iter().map(|c| ("branch", c)));
            let csv = to_csv(rows.map(|(family, c)| Row {
                family,
                identity: &c.identity,
                checked: c.checked,
                mismatches: c.mismatches,
                status: c.status,
            }))?;
            let r = Relations { section, branch, inconclusive_columns: ops.inconclusive };
            out(status, &r, Some(csv))
        }
        "span" => {
            let depth = opts.depth.unwrap_or(opts.window as usize);
            let r = span_vs_class(map, opts.window, opts.starts, opts.fuel, depth);
            out(r.status, &r, None)
        }
        "descent" => {
            if !map.same_action(&collatz()) {
                return Err(InputError("the descent suite is defined for the Collatz map only".into()));
            }
            if opts.window < 5 {
                return Err(InputError("descent needs --window of at least 5".into()));
            }
            let r = descent_check(opts.window);
            out(r.status, &r, None)
        }
        "modular" => match map_ref.parse::<PresetName>() {
            Ok(PresetName::Mersenne(k)) => {
                let identities = verify_mersenne_identities(k)?;
                let orbits = verify_mersenne_orbit_meets_section(k, opts.window, opts.fuel)?;
                #[derive(Serialize)]
                #[serde(rename_all = "camelCase")]
                struct Mersenne {
                    identities: collatz_lab::families::ModularReport,
                    orbits: collatz_lab::families::OrbitMeetsSectionReport,
                }
                let status = identities.status.and(orbits.status);
                let csv = modular_csv(&identities)?;
                out(status, &Mersenne { identities, orbits }, Some(csv))
            }
            Ok(PresetName::Qx1(5)) => {
                let r = verify_q5_group();
                let csv = modular_csv(&r)?;
                out(r.status, &r, Some(csv))
            }
            _ => Err(InputError("the modular suite covers qx1:5 and mersenne:<k>".into())),
        },
        "range" => {
            let r = verify_convergence(map, opts.window, opts.fuel, opts.threads);
            out(r.status, &r, None)
        }
        "norm" => {
            let r = norm_bound_check(map, opts.window, positive("trials", opts.trials)?, opts.seed);
            out(r.status, &r, None)
        }
        other => Err(InputError(format!("unknown suite {other:?}"))),
    }
}

fn modular_csv(r: &collatz_lab::families::ModularReport) -> Result<String, InputError> {
    #[derive(Serialize)]
    struct Row<'a> {
        identity: &'a str,
        instances: u64,
        failures: usize,
    }
    to_csv(r.checks.iter().map(|c| Row { identity: &c.identity, instances: c.instances, failures: c.failures.len() }))
}

/// Lets one closure emit any report type.
mod erased {
    use serde::{Serialize, Serializer};

    pub trait Report {
        fn to_value(&self) -> serde_json::Result<serde_json::Value>;
    }

    impl<T: Serialize> Report for T {
        fn to_value(&self) -> serde_json::Result<serde_json::Value> {
            serde_json::to_value(self)
        }
    }

    pub struct Wrap<'a>(pub &'a dyn Report);

    impl Serialize for Wrap<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            self.0.to_value().map_err(serde::ser::Error::custom)?.serialize(s)
        }
    }
}
