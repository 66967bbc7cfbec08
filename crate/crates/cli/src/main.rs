use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fcchase::analysis::{
    find_sticky_marking, is_joinless, joinless_subset, rewrite_query_specialized, specialize_constants, strip_arity,
    DEFAULT_SPECIALIZATION_BUDGET,
};
use fcchase::chase::{ChaseConfig, ChaseInstance};
use fcchase::driver::{convergence_report, decide, pipeline, DecideConfig, Outcome, Pipeline, DEFAULT_REWRITE_BUDGET};
use fcchase::query::{contains_image, normal_form_violations, normalize, QueryError, DEFAULT_CHOICE_BUDGET};
use fcchase::quotient::{build_model, ModelConfig};
use fcchase::syntax::{parse_problem, write_program, write_queries, Problem, Ucq};

#[derive(Parser)]
#[command(name = "fcchase", version, about = "Chase, quotient models and entailment for joinless existential rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report rule bodies that repeat a variable.
    CheckJoinless {
        #[arg(long)]
        program: PathBuf,
        /// Print the joinless rules of the program.
        #[arg(long)]
        subset: bool,
    },
    /// Look for a marking of immortal positions.
    CheckSticky {
        #[arg(long)]
        program: PathBuf,
    },
    /// Fold the constants of a database and the program into predicate names.
    Specialize {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Queries to rewrite over the specialized signature.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Drop rules mentioning a predicate of this arity or more.
        #[arg(long)]
        strip_arity: Option<usize>,
        /// Write the dictionary here instead of appending it as comments.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run the chase and print its provenance trace.
    Chase {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        depth: u32,
        /// Chase the program as written instead of its annotated form.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = fcchase::chase::DEFAULT_MAX_ELEMENTS)]
        budget_elements: usize,
    },
    /// Build the level-n quotient model.
    Model {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        n: usize,
        /// Print the model over the input signature.
        #[arg(long)]
        source: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = fcchase::chase::DEFAULT_MAX_ELEMENTS)]
        budget_elements: usize,
    },
    /// Print the normal-form candidates of each query.
    Normalize {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CHOICE_BUDGET)]
        budget: usize,
    },
    /// Decide entailment of each query.
    Decide {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Only decide the query with this name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 1_000_000)]
        budget_elements: usize,
        #[arg(long)]
        budget_seconds: Option<f64>,
        #[arg(long, default_value_t = 16)]
        max_rounds: u32,
        /// Write countermodels here, one file per refuted query.
        #[arg(long)]
        countermodel_dir: Option<PathBuf>,
    },
    /// Tabulate query truth across the level-n quotients.
    Report {
        #[arg(long, required_unless_present = "corpus")]
        program: Option<PathBuf>,
        /// Defaults to the program path with a `.cq` extension.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Directory of `.tgd` files, each with a sibling `.cq` file.
        #[arg(long, conflicts_with = "program")]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        nmax: usize,
        #[arg(long, default_value_t = 8)]
        kmax: u32,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_opt(path: Option<&Path>) -> Result<String> {
    path.map_or(Ok(String::new()), read)
}

fn load(program: &Path, queries: Option<&Path>, instance: Option<&Path>) -> Result<Problem> {
    let p = parse_problem(&read(program)?, &read_opt(queries)?, &read_opt(instance)?)
        .with_context(|| format!("parsing {}", program.display()))?;
    Ok(p)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn build(problem: &Problem) -> Result<Pipeline> {
    Ok(pipeline(&problem.program, &problem.database, &problem.queries)?)
}

fn check_joinless(program: &Path, subset: bool) -> Result<ExitCode> {
    let p = load(program, None, None)?;
    let (ok, violations) = is_joinless(&p.program);
    println!("joinless\t{}", if ok { "yes" } else { "no" });
    for v in &violations {
        println!("violation\trule {}\t{}", v.rule + 1, v.var);
    }
    if subset {
        print!("{}", write_program(&joinless_subset(&p.program)));
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn check_sticky(program: &Path) -> Result<ExitCode> {
    let p = load(program, None, None)?;
    match find_sticky_marking(&p.program) {
        Some(m) => {
            println!("sticky\tyes");
            for (pred, pos) in &m.immortal {
                println!("immortal\t{}[{}]", p.program.signature.name(*pred), pos + 1);
            }
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("sticky\tno");
            Ok(ExitCode::from(1))
        }
    }
}

fn specialize(
    program: &Path,
    instance: Option<&Path>,
    queries: Option<&Path>,
    strip: Option<usize>,
    dict: Option<&Path>,
    budget: Option<usize>,
) -> Result<ExitCode> {
    let p = load(program, queries, instance)?;
    let budget = budget.unwrap_or(DEFAULT_SPECIALIZATION_BUDGET);
    let s = specialize_constants(&p.database, &p.program, budget)?;
    let sig = &s.program.signature;
    let mut text = match strip {
        Some(l) => write_program(&strip_arity(&s.program, l)),
        None => write_program(&s.program),
    };
    if !p.queries.is_empty() {
        let rewritten = p
            .queries
            .iter()
            .map(|q| rewrite_query_specialized(q, &p.program.signature, &s, DEFAULT_REWRITE_BUDGET))
            .collect::<Result<Vec<Ucq>, _>>()?;
        text.push_str(&write_queries(sig, &rewritten));
    }
    let table = s.dictionary.to_text(sig);
    match dict {
        Some(path) => fs::write(path, table).with_context(|| format!("writing {}", path.display()))?,
        None => {
            for line in table.lines() {
                let _ = writeln!(text, "% {line}");
            }
        }
    }
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn run_chase(
    program: &Path,
    instance: Option<&Path>,
    depth: u32,
    raw: bool,
    out: Option<&Path>,
    budget: usize,
) -> Result<ExitCode> {
    let p = load(program, None, instance)?;
    let config = ChaseConfig { max_elements: budget };
    let mut inst = if raw || !p.program.is_joinless() {
        ChaseInstance::with_database(std::sync::Arc::new(p.program.clone()), &p.database, config)?
    } else {
        let pl = build(&p)?;
        ChaseInstance::new(pl.annotated.clone(), config)
    };
    inst.run_to(depth)?;
    emit(out, &inst.trace())?;
    Ok(ExitCode::SUCCESS)
}

fn model(program: &Path, n: usize, source: bool, out: Option<&Path>, budget: usize) -> Result<ExitCode> {
    let p = load(program, None, None)?;
    let pl = build(&p)?;
    let config = ModelConfig { chase: ChaseConfig { max_elements: budget }, ..ModelConfig::default() };
    let m = build_model(pl.annotated.clone(), n, config)?;
    let text = if source {
        pl.project(&m.structure).to_text(&pl.source.signature)
    } else {
        m.structure.to_text(&pl.annotated.signature)
    };
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn run_normalize(program: &Path, query: &Path, budget: usize) -> Result<ExitCode> {
    let p = load(program, Some(query), None)?;
    let pl = build(&p)?;
    let sig = &pl.annotated.signature;
    for q in &pl.queries {
        for (d, cq) in q.parenthood.disjuncts.iter().enumerate() {
            let norm = match normalize(cq, &pl.annotated, budget) {
                Ok(n) => n,
                Err(QueryError::Cyclic) => {
                    println!("% {} disjunct {}: cyclic, not normalized", q.source.name, d + 1);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            println!("% {} disjunct {}: {} candidates, {} discarded", q.source.name, d + 1, norm.candidates.len(), norm.discarded.len());
            for (choice, why) in &norm.discarded {
                let c: Vec<String> = choice.iter().map(|(v, pred)| format!("{v}:{}", sig.name(*pred))).collect();
                println!("% discarded [{}]: {why}", c.join(" "));
            }
            for (c, cand) in norm.candidates.iter().enumerate() {
                let name = format!("{}_{}_{}", q.source.name, d + 1, c + 1);
                print!("{}", write_queries(sig, &[Ucq::new(name, vec![cand.query.clone()])]));
                let violations = normal_form_violations(&cand.query, sig)?;
                for cond in ["i", "ii", "iii"] {
                    let bad: Vec<String> =
                        violations.iter().filter(|v| v.condition() == cond).map(|v| v.to_string()).collect();
                    if bad.is_empty() {
                        println!("% ({cond}) ok");
                    } else {
                        println!("% ({cond}) violated: {}", bad.join("; "));
                    }
                }
                println!("% image {}", if contains_image(cq, &cand.query, &cand.substitution) { "ok" } else { "missing" });
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn run_decide(
    program: &Path,
    query: &Path,
    instance: Option<&Path>,
    name: Option<&str>,
    budget_elements: usize,
    budget_seconds: Option<f64>,
    max_rounds: u32,
    countermodels: Option<&Path>,
) -> Result<ExitCode> {
    let p = load(program, Some(query), instance)?;
    let pl = build(&p)?;
    let config = DecideConfig {
        max_elements: budget_elements,
        max_time: budget_seconds.map(Duration::from_secs_f64),
        max_rounds,
        ..DecideConfig::default()
    };
    let selected: Vec<_> = pl.queries.iter().filter(|q| name.is_none_or(|n| q.source.name == n)).collect();
    if selected.is_empty() {
        bail!("no query to decide");
    }
    let mut worst = Outcome::Entailed;
    for q in selected {
        let v = decide(&pl, q, config);
        let detail = match v.outcome {
            Outcome::Entailed => format!("depth={}", v.depth),
            Outcome::NotEntailed => {
                let cm = v.countermodel.as_ref().expect("not-entailed carries a countermodel");
                format!("n={}\tclasses={}", cm.n, cm.source.domain.len())
            }
            Outcome::Unknown => format!(
                "depth={}\tmax_n={}",
                v.depth,
                v.max_n.map_or("-".to_string(), |n| n.to_string())
            ),
        };
        println!("{}\t{}\t{}\t{}", q.source.name, v.outcome.as_str(), detail, v.reason);
        if let (Some(dir), Some(cm)) = (countermodels, &v.countermodel) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}.model", q.source.name));
            fs::write(&path, cm.source.to_text(&pl.source.signature))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        worst = match (worst, v.outcome) {
            (Outcome::Unknown, _) | (_, Outcome::Unknown) => Outcome::Unknown,
            (Outcome::NotEntailed, _) | (_, Outcome::NotEntailed) => Outcome::NotEntailed,
            _ => Outcome::Entailed,
        };
    }
    Ok(ExitCode::from(worst.exit_code() as u8))
}

fn corpus_programs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = e?.path();
        if path.extension().is_some_and(|x| x == "tgd") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn report(program: Option<&Path>, queries: Option<&Path>, corpus: Option<&Path>, nmax: usize, kmax: u32) -> Result<ExitCode> {
    let programs: Vec<(PathBuf, PathBuf)> = match (program, corpus) {
        (Some(p), _) => vec![(p.to_path_buf(), queries.map_or_else(|| p.with_extension("cq"), Path::to_path_buf))],
        (None, Some(dir)) => corpus_programs(dir)?.into_iter().map(|p| {
            let q = p.with_extension("cq");
            (p, q)
        }).collect(),
        (None, None) => bail!("either --program or --corpus is required"),
    };
    let mut failed = false;
    for (prog, q) in programs {
        let qpath = q.exists().then_some(q.as_path());
        let p = load(&prog, qpath, None)?;
        let pl = build(&p)?;
        let name = prog.file_stem().map_or_else(|| "program".to_string(), |s| s.to_string_lossy().into_owned());
        let text = convergence_report(&pl, &name, nmax, kmax, ModelConfig::default());
        failed |= text.contains("FAIL");
        print!("{text}");
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn seed() {
    // Tie-breaking is already deterministic; the variable is only validated.
    if let Ok(s) = std::env::var("FCCHASE_SEED") {
        if s.trim().parse::<u64>().is_err() {
            eprintln!("warning: ignoring FCCHASE_SEED={s:?}: not an unsigned integer");
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    seed();
    match cli.command {
        Command::CheckJoinless { program, subset } => check_joinless(&program, subset),
        Command::CheckSticky { program } => check_sticky(&program),
        Command::Specialize { program, instance, queries, strip_arity, dict, budget } => {
            specialize(&program, instance.as_deref(), queries.as_deref(), strip_arity, dict.as_deref(), budget)
        }
        Command::Chase { program, instance, depth, raw, out, budget_elements } => {
            run_chase(&program, instance.as_deref(), depth, raw, out.as_deref(), budget_elements)
        }
        Command::Model { program, n, source, out, budget_elements } => {
            model(&program, n, source, out.as_deref(), budget_elements)
        }
        Command::Normalize { program, query, budget } => run_normalize(&program, &query, budget),
        Command::Decide { program, query, instance, name, budget_elements, budget_seconds, max_rounds, countermodel_dir } => {
            run_decide(
                &program,
                &query,
                instance.as_deref(),
                name.as_deref(),
                budget_elements,
                budget_seconds,
                max_rounds,
                countermodel_dir.as_deref(),
            )
        }
        Command::Report { program, queries, corpus, nmax, kmax, format: Format::Tsv } => {
            report(program.as_deref(), queries.as_deref(), corpus.as_deref(), nmax, kmax)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
