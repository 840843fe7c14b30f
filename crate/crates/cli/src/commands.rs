use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use parlance_core::agents::{RepeatLabelAgent, Teacher};
use parlance_core::ir::TermStats;
use parlance_core::tasks::build::is_built;
use parlance_core::tasks::{build_task, load_teacher, verify_task, BuildOutcome, DataSource, HttpFetcher, LoadOptions};
use parlance_core::tasks::{Registry, TaskSpec};
use parlance_core::worlds::{BatchWorld, DialogPartnerWorld, HogwildConfig, HogwildWorld, World};
use parlance_core::{DataMode, MetricsReport};

use crate::args::{BuildArgs, DataArgs, DisplayArgs, EvalArgs, ExecArgs, ModelArgs, TrainArgs};
use crate::models::{accept_remote, load_stats, timeout, usage, Model, ModelKind};

/// Loads the teacher for `data.task`, streaming `mode`.
pub fn teacher(data: &DataArgs, mode: DataMode) -> Result<Box<dyn Teacher>> {
    let registry = Registry::builtin();
    let spec = TaskSpec::parse(&data.task, &registry)?;
    let source = if data.download {
        for entry in &spec.entries {
            let d = registry.get(&entry.task).expect("parsed entries are registered");
            if !d.sources.is_empty() && !is_built(d, &data.datapath) {
                eprintln!("building {} under {}", d.name, data.datapath.display());
                build_task(d, &data.datapath, &HttpFetcher, false)?;
            }
        }
        DataSource::Disk(data.datapath.clone())
    } else {
        DataSource::Bundled
    };
    let opts = LoadOptions { source, mode, seed: data.seed, mix: data.mix, ..Default::default() };
    Ok(load_teacher(&spec, &registry, &opts)?)
}

pub fn display_data(args: DisplayArgs) -> Result<()> {
    let teacher = teacher(&args.data, args.data.datatype)?;
    let mut world = DialogPartnerWorld::new(teacher, Box::new(RepeatLabelAgent::new()));
    for _ in 0..args.num_examples {
        if world.epoch_done() {
            break;
        }
        world.parley()?;
        println!("{}", world.display());
    }
    world.shutdown();
    Ok(())
}

/// Plays one pass of `teacher` with `model` in the configured world and
/// returns the teacher's report. `limit` caps the number of teacher turns.
pub fn play(
    teacher: Box<dyn Teacher>,
    model: &mut Model,
    exec: &ExecArgs,
    limit: Option<u64>,
    render: bool,
) -> Result<MetricsReport> {
    if exec.batch_size == 0 || exec.workers == 0 {
        return Err(usage("batch size and worker count must be at least 1"));
    }
    if exec.batch_size > 1 && exec.workers > 1 {
        return Err(usage("choose either a batch size or a worker count, not both"));
    }
    if exec.workers > 1 {
        let shared = model.shared().ok_or_else(|| usage("remote models cannot run under hogwild workers"))?;
        let budget = limit.unwrap_or(teacher.num_examples() as u64).min(teacher.num_examples() as u64);
        let world = HogwildWorld::new(teacher, shared, HogwildConfig { workers: exec.workers, budget })?;
        return Ok(world.run()?);
    }
    let mut turns = 0u64;
    let under_limit = |turns: u64| limit.is_none_or(|l| turns < l);
    if exec.batch_size > 1 {
        if model.shared().is_none() {
            return Err(usage("remote models are served one example at a time; drop -b"));
        }
        let mut world = BatchWorld::new(teacher.as_ref(), model.agent()?, exec.batch_size)?;
        while !world.epoch_done() && under_limit(turns) {
            world.parley()?;
            turns += world.last_acts().len() as u64;
            if render {
                println!("{}", world.display());
            }
        }
        let report = world.report();
        world.shutdown();
        return Ok(report);
    }
    let mut world = DialogPartnerWorld::new(teacher, model.agent()?);
    while !world.epoch_done() && under_limit(turns) {
        world.parley()?;
        turns += 1;
        if render {
            println!("{}", world.display());
        }
    }
    let report = world.report();
    world.shutdown();
    Ok(report)
}

/// Streams the train split through the baseline in training mode.
fn fit(model: &mut Model, data: &DataArgs, exec: &ExecArgs) -> Result<()> {
    let ir = model.ir_handle().cloned();
    if let Some(ir) = &ir {
        ir.set_training(true);
    }
    let result = play(teacher(data, DataMode::TRAIN_ORDERED)?, model, exec, None, false);
    if let Some(ir) = &ir {
        ir.set_training(false);
    }
    result.map(|_| ())
}

fn eval_model_for(args: &ModelArgs, data: &DataArgs, exec: &ExecArgs) -> Result<Model> {
    match ModelKind::parse(&args.model)? {
        ModelKind::RepeatLabel => Ok(Model::repeat_label()),
        ModelKind::IrBaseline if args.model_file.exists() => Ok(Model::ir(load_stats(&args.model_file)?)),
        ModelKind::IrBaseline => {
            eprintln!("no statistics at {}; fitting on the train split first", args.model_file.display());
            let mut model = Model::ir(TermStats::new());
            fit(&mut model, data, exec)?;
            Ok(model)
        }
        ModelKind::Remote(addr) => Ok(Model::remote(accept_remote(&addr, timeout(args)?)?)),
    }
}

fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&report.to_json())?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn eval_model(args: EvalArgs) -> Result<()> {
    let mode = args.data.datatype.as_ordered();
    // fail on a bad task before waiting for any peer
    let teacher = teacher(&args.data, mode)?;
    let mut model = eval_model_for(&args.model, &args.data, &args.exec)?;
    let report = play(teacher, &mut model, &args.exec, args.num_examples, args.render)?;
    print!("{}", report.render());
    if let Some(path) = &args.report_json {
        write_report(path, &report)?;
    }
    Ok(())
}

pub fn train_model(args: TrainArgs) -> Result<()> {
    if args.epochs == 0 || args.validate_every == 0 {
        return Err(usage("epochs and validation interval must be at least 1"));
    }
    // both splits must exist before any work is done
    teacher(&args.data, DataMode::TRAIN_ORDERED)?;
    teacher(&args.data, DataMode::VALID)?;
    let mut model = match ModelKind::parse(&args.model.model)? {
        ModelKind::IrBaseline => Model::ir(TermStats::new()),
        ModelKind::Remote(addr) => Model::remote(accept_remote(&addr, timeout(&args.model)?)?),
        ModelKind::RepeatLabel => return Err(usage("repeat_label has nothing to train")),
    };
    if matches!(model, Model::Remote(_)) && args.epochs > 1 {
        return Err(usage("a remote model session covers a single epoch"));
    }
    let mut last = None;
    for epoch in 1..=args.epochs {
        if let Some(ir) = model.ir_handle() {
            ir.set_training(true);
        }
        let train = play(teacher(&args.data, DataMode::TRAIN_ORDERED)?, &mut model, &args.exec, None, false);
        if let Some(ir) = model.ir_handle() {
            ir.set_training(false);
        }
        let train = train?;
        println!("epoch {epoch}: streamed {} training examples", train.examples);
        if epoch % args.validate_every != 0 && epoch != args.epochs {
            continue;
        }
        if let Some(ir) = model.ir_handle() {
            ir.stats()
                .save(&args.model.model_file)
                .with_context(|| format!("cannot write {}", args.model.model_file.display()))?;
            println!("saved term statistics to {}", args.model.model_file.display());
        }
        if let Model::Remote(_) = model {
            // the single session was spent on training
            last = Some(train);
            break;
        }
        let report = play(teacher(&args.data, DataMode::VALID)?, &mut model, &args.exec, None, false)?;
        println!("[validation after epoch {epoch}]");
        print!("{}", report.render());
        last = Some(report);
    }
    if let (Some(path), Some(report)) = (&args.report_json, &last) {
        write_report(path, report)?;
    }
    Ok(())
}

pub fn build(args: BuildArgs) -> Result<()> {
    let registry = Registry::builtin();
    let spec = TaskSpec::parse(&args.task, &registry)?;
    for entry in &spec.entries {
        let d = registry.get(&entry.task).expect("parsed entries are registered");
        if d.sources.is_empty() {
            println!("{}: nothing to download", d.name);
            continue;
        }
        if args.verify {
            verify_task(d, &args.datapath)?;
            println!("{}: verified", d.name);
            continue;
        }
        match build_task(d, &args.datapath, &HttpFetcher, args.force)? {
            BuildOutcome::Built => println!("{}: built", d.name),
            BuildOutcome::AlreadyBuilt => println!("{}: already built", d.name),
        }
    }
    Ok(())
}
