use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use pitune_core::analysis::bound::random_pair;
use pitune_core::analysis::{self, barrier, k_sweep, landscape_2d, lmc_scan, quad_bound_check, shift_eval};
use pitune_core::experts::ExpertKind;
use pitune_core::fisher::{cosine, fisher_diag, similarity_matrix, top_k};
use pitune_core::format::write_atomic;
use pitune_core::interp::{
    build_ensemble, multitask_tune, pi_tune_with, probe_embedding, zero_shot, InterpolationEnsemble, TuneOptions,
};
use pitune_core::registry::{RegistryLock, TaskRegistry};
use pitune_core::rng::{derive_seed, labelled_rng};
use pitune_core::tasks::{make_family, pretrain_backbone, task_id, FamilyRequest, Manifest, ManifestRecord};
use pitune_core::train::{evaluate, train};
use pitune_core::{
    build_expert, Backbone, BackboneConfig, Error, ExpertConfig, ExpertWeights, SplitSizes, TaskSpec, TrainConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, Command, Kind, SplitName, TaskSelection, TrainArgs};

const CLASSES: usize = 5;

pub fn run(cli: Cli) -> Result<()> {
    let name = command_name(&cli.command);
    let registry = match (&cli.registry, &cli.command) {
        (Some(r), _) => r.clone(),
        (None, Command::CheckBound { .. }) if cli.out.is_some() => PathBuf::new(),
        (None, _) => return Err(Error::Config("no registry given (use --registry or PI_REGISTRY)".into()).into()),
    };
    let mut rc = RunConfig::new(name, &registry, cli.out.as_deref(), cli.seed);
    let seed = cli.seed;
    match cli.command {
        Command::GenTasks { angles, permutations, pretrain_angles, targets, shots, train, val, test, noise } => {
            let sizes = SplitSizes { train, val, test };
            let manifest =
                build_manifest(seed, &angles, permutations, &pretrain_angles, &targets, shots, sizes, noise)?;
            gen_tasks(&rc, manifest)
        }
        Command::Pretrain { train } => {
            rc.check_paths(false)?;
            rc.train = Some(train.apply(TrainConfig::pretraining().with_seed(seed)));
            pretrain(&rc)
        }
        Command::TrainExpert { tasks, kind, size, points, train } => {
            rc.check_paths(true)?;
            rc.expert = Some(expert_config(kind, size, points)?);
            rc.train = Some(train.apply(TrainConfig::default().with_seed(seed)));
            train_expert(&rc, &tasks)
        }
        Command::Embed { tasks, kind, samples } => {
            rc.check_paths(true)?;
            embed(&rc, &tasks, kind, samples)
        }
        Command::Graph { kind } => {
            rc.check_paths(false)?;
            graph(&rc, kind)
        }
        Command::Retrieve { task, k, kind } => {
            rc.check_paths(false)?;
            rc.k = Some(k);
            retrieve(&rc, &task, k, kind)
        }
        Command::PiTune { task, k, mode, kind, alpha_lr, train } => {
            rc.check_paths(true)?;
            rc.k = Some(k);
            rc.mode = Some(mode);
            rc.train = Some(train.apply(TrainConfig::interpolation().with_seed(seed)));
            pi_tune_cmd(&rc, &task, kind, TuneOptions { alpha_lr })
        }
        Command::ZeroShot { task, kind } => {
            rc.check_paths(true)?;
            rc.train = Some(TrainConfig::default().with_seed(seed));
            zero_shot_cmd(&rc, &task, kind)
        }
        Command::Multitask { tasks, kind, train } => {
            rc.check_paths(true)?;
            rc.train = Some(train.apply(TrainConfig::interpolation().with_seed(seed)));
            multitask(&rc, &tasks, kind)
        }
        Command::Lmc { task, source, interval, kind } => {
            rc.check_paths(true)?;
            lmc(&rc, &task, &source, interval, kind)
        }
        Command::Landscape { task, experts, grid, margin, kind } => {
            rc.check_paths(true)?;
            landscape(&rc, &task, &experts, grid, margin, kind)
        }
        Command::AblateK { task, kmax, kind, train } => {
            rc.check_paths(true)?;
            rc.k = Some(kmax);
            rc.train = Some(train.apply(TrainConfig::interpolation().with_seed(seed)));
            ablate_k(&rc, &task, kmax, kind)
        }
        Command::Transfer { task, interval, kind } => {
            rc.check_paths(true)?;
            transfer(&rc, &task, interval, kind)
        }
        Command::Shift { tasks, kind } => {
            rc.check_paths(true)?;
            shift(&rc, &tasks, kind)
        }
        Command::CheckBound { trials, dim, cond, c3 } => check_bound(&rc, trials, dim, cond, c3),
        Command::Eval { task, expert, kind, split } => {
            rc.check_paths(true)?;
            eval(&rc, &task, expert.as_deref(), kind, split)
        }
        Command::Fsck => {
            rc.check_paths(false)?;
            fsck(&rc)
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenTasks { .. } => "gen-tasks",
        Command::Pretrain { .. } => "pretrain",
        Command::TrainExpert { .. } => "train-expert",
        Command::Embed { .. } => "embed",
        Command::Graph { .. } => "graph",
        Command::Retrieve { .. } => "retrieve",
        Command::PiTune { .. } => "pi-tune",
        Command::ZeroShot { .. } => "zero-shot",
        Command::Multitask { .. } => "multitask",
        Command::Lmc { .. } => "lmc",
        Command::Landscape { .. } => "landscape",
        Command::AblateK { .. } => "ablate-k",
        Command::Transfer { .. } => "transfer",
        Command::Shift { .. } => "shift",
        Command::CheckBound { .. } => "check-bound",
        Command::Eval { .. } => "eval",
        Command::Fsck => "fsck",
    }
}

impl TrainArgs {
    fn apply(&self, mut tc: TrainConfig) -> TrainConfig {
        if let Some(s) = self.steps {
            tc.steps = s;
        }
        if let Some(lr) = self.lr {
            tc.lr = lr;
        }
        if let Some(b) = self.batch_size {
            tc.batch_size = b;
        }
        tc
    }
}

fn expert_config(kind: Kind, size: Option<usize>, points: Option<Vec<usize>>) -> Result<ExpertConfig> {
    let mut cfg = ExpertConfig::default_for(kind.name())?;
    if let Some(n) = size {
        cfg.kind = match cfg.kind {
            ExpertKind::Adapter { .. } => ExpertKind::Adapter { bottleneck: n },
            ExpertKind::Lora { .. } => ExpertKind::Lora { rank: n },
            ExpertKind::Prompt { .. } => ExpertKind::Prompt { length: n },
            ExpertKind::Bitfit => {
                return Err(Error::Config("bitfit experts take no --size".into()).into());
            }
        };
    }
    Ok(match points {
        Some(p) => cfg.at(p),
        None => cfg,
    })
}

/// Shared starting point for every expert of one configuration.
fn expert_init(cfg: &ExpertConfig, bb: &Backbone, seed: u64) -> Result<ExpertWeights> {
    Ok(build_expert(cfg, bb, derive_seed(seed, &format!("expert-init/{}", cfg.hash())))?)
}

/// Label permutation `p` of the family: a cyclic shift by `p` classes.
fn permutation(p: usize) -> Vec<usize> {
    (0..CLASSES).map(|c| (c + p) % CLASSES).collect()
}

#[allow(clippy::too_many_arguments)]
fn build_manifest(
    seed: u64,
    angles: &[f64],
    permutations: usize,
    pretrain_angles: &[f64],
    targets: &[f64],
    shots: usize,
    sizes: SplitSizes,
    noise: f64,
) -> Result<Manifest> {
    if permutations >= CLASSES {
        return Err(Error::Config(format!("at most {} label permutations, got {permutations}", CLASSES - 1)).into());
    }
    let req = FamilyRequest {
        base_seed: seed,
        count: angles.len() * (permutations + 1),
        angles_deg: angles.to_vec(),
        permutations: (0..=permutations).map(permutation).collect(),
        classes: CLASSES,
        noise,
        dim: BackboneConfig::default().input_dim,
    };
    let family = make_family(&req)?;
    let mut records: Vec<ManifestRecord> = family
        .specs
        .into_iter()
        .zip(family.data_seeds)
        .map(|(spec, data_seed)| ManifestRecord { spec, data_seed, sizes, pretrain: false, shots: None })
        .collect();
    let extra = |deg: f64, pretrain: bool, shots: Option<usize>| {
        let id = task_id(deg, 0);
        let spec = TaskSpec::rotation(&id, deg.to_radians().rem_euclid(std::f64::consts::TAU)).with_noise(noise);
        ManifestRecord { data_seed: derive_seed(seed, &format!("data/{id}")), spec, sizes, pretrain, shots }
    };
    records.extend(pretrain_angles.iter().map(|&d| extra(d, true, None)));
    records.extend(targets.iter().map(|&d| extra(d, false, Some(shots))));
    let mut seen = std::collections::BTreeSet::new();
    for r in &records {
        r.spec.validate()?;
        if !seen.insert(r.spec.id.clone()) {
            return Err(Error::Config(format!("task `{}` is generated twice", r.spec.id)).into());
        }
    }
    Ok(Manifest { task: records })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Records the resolved run configuration under `<out>/runs/`.
fn save_run(rc: &RunConfig) -> Result<()> {
    write_text(&rc.out.join("runs").join(format!("{}.toml", rc.command)), &rc.to_toml())
}

fn open(rc: &RunConfig) -> Result<TaskRegistry> {
    Ok(TaskRegistry::open(&rc.registry)?)
}

fn selected(reg: &TaskRegistry, sel: &TaskSelection) -> Result<Vec<String>> {
    if sel.all {
        return Ok(reg.manifest().task.iter().filter(|r| !r.pretrain).map(|r| r.spec.id.clone()).collect());
    }
    for id in &sel.task {
        reg.record(id)?;
    }
    Ok(sel.task.clone())
}

fn gen_tasks(rc: &RunConfig, manifest: Manifest) -> Result<()> {
    std::fs::create_dir_all(&rc.registry).with_context(|| format!("creating {}", rc.registry.display()))?;
    let _lock = RegistryLock::acquire(&rc.registry)?;
    if rc.manifest.exists() {
        let existing = Manifest::load(&rc.manifest)?;
        if existing != manifest {
            return Err(Error::Data(format!(
                "{} already holds a different task family; use a fresh registry",
                rc.registry.display()
            ))
            .into());
        }
    }
    let reg = TaskRegistry::create(&rc.registry, manifest)?;
    for id in reg.ids() {
        let ds = reg.dataset(&id)?;
        info!("{id}: {} train / {} val / {} test rows", ds.train.len(), ds.val.len(), ds.test.len());
    }
    save_run(rc)?;
    println!("{} tasks in {}", reg.ids().len(), rc.registry.display());
    Ok(())
}

fn pretrain(rc: &RunConfig) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    if rc.backbone.exists() {
        warn!("backbone already present at {}; left untouched", rc.backbone.display());
        println!("backbone {}", reg.backbone()?.theta_hash());
        return Ok(());
    }
    let ids: Vec<String> = reg.manifest().task.iter().filter(|r| r.pretrain).map(|r| r.spec.id.clone()).collect();
    if ids.is_empty() {
        return Err(Error::Data("manifest marks no task for pretraining".into()).into());
    }
    let pool = ids.iter().map(|id| reg.dataset(id)).collect::<pitune_core::Result<Vec<_>>>()?;
    let tc = rc.train.as_ref().expect("train config resolved");
    info!("pretraining on {ids:?} for {} steps", tc.steps);
    let bb = pretrain_backbone(BackboneConfig::default(), &pool, tc)?;
    reg.save_backbone(&bb)?;
    save_run(rc)?;
    println!("backbone {}", bb.theta_hash());
    Ok(())
}

fn train_expert(rc: &RunConfig, sel: &TaskSelection) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let cfg = rc.expert.as_ref().expect("expert config resolved");
    let tc = rc.train.as_ref().expect("train config resolved");
    let init = expert_init(cfg, &bb, rc.seed)?;
    let kind = cfg.kind.name();
    for id in selected(&reg, sel)? {
        let ds = reg.dataset(&id)?;
        let outcome = train(&bb, &init, &ds, tc)?;
        let path = reg.save_expert(&id, &outcome.expert)?;
        let stale = reg.embedding_path(&id, kind);
        if stale.exists() {
            std::fs::remove_file(&stale).with_context(|| format!("removing stale {}", stale.display()))?;
        }
        let val = evaluate(&bb, Some(&outcome.expert), &ds.val)?;
        let test = evaluate(&bb, Some(&outcome.expert), &ds.test)?;
        write_json(
            &rc.out.join("train").join(format!("{id}-{kind}.json")),
            &json!({
                "task": id,
                "kind": kind,
                "config_hash": cfg.hash(),
                "params": outcome.expert.len(),
                "steps": tc.steps,
                "epoch_losses": outcome.epoch_losses,
                "val": val,
                "test": test,
            }),
        )?;
        println!("{id}\t{kind}\ttest_accuracy={}\t{}", test.accuracy, path.display());
    }
    save_run(rc)
}

fn embed(rc: &RunConfig, sel: &TaskSelection, kind: Kind, samples: usize) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    for id in selected(&reg, sel)? {
        let expert = reg.expert(&id, kind.name())?;
        let ds = reg.dataset(&id)?;
        let emb = fisher_diag(&bb, &expert, &id, &ds.train, samples)?;
        let path = reg.save_embedding(&id, kind.name(), &emb)?;
        println!("{id}\tsamples={}\t{}", emb.samples, path.display());
    }
    save_run(rc)
}

fn graph(rc: &RunConfig, kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let g = similarity_matrix(&reg.pool(kind.name())?.embeddings())?;
    let stem = rc.out.join(format!("similarity-{}", kind.name()));
    write_text(&stem.with_extension("csv"), &g.to_csv())?;
    write_text(&stem.with_extension("svg"), &g.to_svg())?;
    save_run(rc)?;
    println!("{}", stem.with_extension("csv").display());
    Ok(())
}

fn retrieve(rc: &RunConfig, task: &str, k: usize, kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let ranked = top_k(task, &reg.pool(kind.name())?.embeddings(), k)?;
    for (rank, (id, score)) in ranked.iter().enumerate() {
        println!("{}\t{id}\t{score:.6}", rank + 1);
    }
    Ok(())
}

fn pi_tune_cmd(rc: &RunConfig, task: &str, kind: Kind, opts: TuneOptions) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let (k, mode) = (rc.k.unwrap_or(0), rc.mode.unwrap_or_default());
    let ens = build_ensemble(task, &reg.pool(kind.name())?, k)?;
    let ds = reg.dataset(task)?;
    let tc = rc.train.as_ref().expect("train config resolved");
    let outcome = pi_tune_with(&bb, &ds, &ens, mode, tc, opts)?;
    let stem = rc.out.join("pi-tune").join(format!("{task}-{}-{mode}-k{k}", kind.name()));
    ensure_parent(&stem)?;
    outcome.collapsed.save(&stem.with_extension("pifx"))?;
    write_json(&stem.with_extension("json"), &outcome.metrics)?;
    save_run(rc)?;
    println!(
        "{task}\t{mode}\tk={k}\ttest_accuracy={}\t{}",
        outcome.metrics.test_accuracy,
        stem.with_extension("pifx").display()
    );
    Ok(())
}

fn zero_shot_cmd(rc: &RunConfig, task: &str, kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let mut pool = reg.pool(kind.name())?;
    pool.remove(task);
    let cfg = match pool.ids().next() {
        Some(id) => pool.get(id)?.expert.config.clone(),
        None => return Err(Error::Retrieval("zero-shot transfer needs a nonempty pool".into()).into()),
    };
    let ds = reg.dataset(task)?;
    let init = expert_init(&cfg, &bb, rc.seed)?;
    let tc = rc.train.as_ref().expect("train config resolved");
    let emb = probe_embedding(&bb, &init, &ds, tc)?;
    let m = zero_shot(&bb, &ds, &emb, &pool)?;
    write_json(&rc.out.join("zero-shot").join(format!("{task}-{}.json", kind.name())), &m)?;
    save_run(rc)?;
    println!("{task}\tneighbor={}\ttest_accuracy={}", m.neighbor, m.test_accuracy);
    Ok(())
}

fn multitask(rc: &RunConfig, tasks: &[String], kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let pool = reg.pool(kind.name())?;
    let head = &tasks[0];
    let target = pool.get(head)?;
    let mut aux = Vec::new();
    for id in &tasks[1..] {
        let e = pool.get(id)?;
        aux.push((id.clone(), cosine(&target.embedding, &e.embedding)?, e.expert.clone()));
    }
    aux.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let ens = InterpolationEnsemble::new(head.clone(), target.expert.clone(), aux)?;
    let data = tasks.iter().map(|id| reg.dataset(id)).collect::<pitune_core::Result<Vec<_>>>()?;
    let tc = rc.train.as_ref().expect("train config resolved");
    let report = multitask_tune(&bb, &data, &ens, tc)?;
    write_json(&rc.out.join("multitask").join(format!("{}-{}.json", tasks.join("+"), kind.name())), &report)?;
    save_run(rc)?;
    println!(
        "pi_mean_accuracy={}\tbaseline_mean_accuracy={}",
        pitune_core::interp::MultitaskReport::mean_accuracy(&report.pi),
        pitune_core::interp::MultitaskReport::mean_accuracy(&report.baseline)
    );
    Ok(())
}

fn lmc(rc: &RunConfig, task: &str, source: &str, interval: f64, kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let ds = reg.dataset(task)?;
    let from = reg.expert(task, kind.name())?;
    let to = reg.expert(source, kind.name())?;
    let curve = lmc_scan(&bb, &ds.test, (task, &from), (source, &to), interval)?;
    let b = barrier(&curve);
    let stem = rc.out.join("lmc").join(format!("{task}-{source}-{}", kind.name()));
    write_text(&stem.with_extension("csv"), &curve.to_csv())?;
    write_text(&stem.with_extension("svg"), &curve.to_svg())?;
    write_json(
        &stem.with_extension("json"),
        &json!({ "from": task, "to": source, "interval": interval, "barrier": b }),
    )?;
    save_run(rc)?;
    println!("{task}\t{source}\tbarrier={b}");
    Ok(())
}

fn landscape(rc: &RunConfig, task: &str, experts: &[String], grid: usize, margin: f64, kind: Kind) -> Result<()> {
    let [a, b, c] = experts else {
        return Err(Error::Config(format!("landscape needs exactly 3 experts, got {}", experts.len())).into());
    };
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let ds = reg.dataset(task)?;
    let (ea, eb, ec) = (reg.expert(a, kind.name())?, reg.expert(b, kind.name())?, reg.expert(c, kind.name())?);
    let land = landscape_2d(&bb, &ds.test, [(a, &ea), (b, &eb), (c, &ec)], grid, margin)?;
    let stem = rc.out.join("landscape").join(format!("{task}-{}", kind.name()));
    write_text(&stem.with_extension("csv"), &land.to_csv())?;
    write_text(&stem.with_extension("svg"), &land.to_svg())?;
    write_text(&stem.with_extension("json"), &land.sidecar_json())?;
    save_run(rc)?;
    println!("{}", stem.with_extension("csv").display());
    Ok(())
}

fn ablate_k(rc: &RunConfig, task: &str, kmax: usize, kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let ds = reg.dataset(task)?;
    let tc = rc.train.as_ref().expect("train config resolved");
    let sweep = k_sweep(&bb, &ds, &reg.pool(kind.name())?, kmax, tc)?;
    let mut csv = String::from("k,test_accuracy\n");
    for (k, acc) in &sweep {
        csv.push_str(&format!("{k},{acc:?}\n"));
        println!("{k}\t{acc}");
    }
    write_text(&rc.out.join("ablate-k").join(format!("{task}-{}.csv", kind.name())), &csv)?;
    save_run(rc)
}

fn transfer(rc: &RunConfig, task: &str, interval: f64, kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let pool = reg.pool(kind.name())?;
    let target = pool.get(task)?;
    let mut sources = Vec::new();
    for id in pool.ids().filter(|id| *id != task) {
        let e = pool.get(id)?;
        sources.push((id.clone(), cosine(&target.embedding, &e.embedding)?, e.expert.clone()));
    }
    let ds = reg.dataset(task)?;
    let report = analysis::transfer_correlation(&bb, &ds.test, (task, &target.expert), &sources, interval)?;
    write_json(&rc.out.join("transfer").join(format!("{task}-{}.json", kind.name())), &report)?;
    save_run(rc)?;
    println!("spearman_direct={}\tspearman_best={}", report.spearman_direct, report.spearman_best);
    Ok(())
}

fn shift(rc: &RunConfig, tasks: &[String], kind: Kind) -> Result<()> {
    let reg = open(rc)?;
    let _lock = reg.lock()?;
    let bb = reg.backbone()?;
    let ids: Vec<String> =
        if tasks.is_empty() { reg.pool(kind.name())?.ids().cloned().collect() } else { tasks.to_vec() };
    let mut experts = BTreeMap::new();
    let mut tests = BTreeMap::new();
    for id in ids {
        experts.insert(id.clone(), reg.expert(&id, kind.name())?);
        tests.insert(id.clone(), reg.dataset(&id)?.test);
    }
    let m = shift_eval(&bb, &experts, &tests)?;
    let path = rc.out.join(format!("shift-{}.csv", kind.name()));
    write_text(&path, &m.to_csv())?;
    save_run(rc)?;
    println!("mean_off_diagonal_drop={}", m.mean_off_diagonal());
    Ok(())
}

fn check_bound(rc: &RunConfig, trials: usize, dim: usize, cond: f64, c3: f64) -> Result<()> {
    if dim == 0 || cond.is_nan() || cond < 1.0 {
        return Err(Error::Config(format!("need dim >= 1 and cond >= 1, got dim={dim} cond={cond}")).into());
    }
    let mut rng = labelled_rng(rc.seed, "check-bound");
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        reports.push(quad_bound_check(&random_pair(&mut rng, dim, cond), c3)?);
    }
    let holds = reports.iter().filter(|r| r.holds).count();
    let tightest = reports.iter().map(|r| r.lhs / r.rhs).fold(0.0, f64::max);
    write_json(
        &rc.out.join(format!("check-bound-d{dim}.json")),
        &json!({ "trials": trials, "dim": dim, "cond": cond, "c3": c3, "holds": holds, "max_ratio": tightest, "reports": reports }),
    )?;
    save_run(rc)?;
    println!("holds={holds}/{trials}\tmax_lhs_over_rhs={tightest}");
    Ok(())
}

fn eval(rc: &RunConfig, task: &str, expert: Option<&Path>, kind: Kind, split: SplitName) -> Result<()> {
    let reg = open(rc)?;
    let bb = reg.backbone()?;
    let e = match expert {
        Some(p) => ExpertWeights::load(p)?,
        None => reg.expert(task, kind.name())?,
    };
    let ds = reg.dataset(task)?;
    let (name, data) = match split {
        SplitName::Train => ("train", &ds.train),
        SplitName::Val => ("val", &ds.val),
        SplitName::Test => ("test", &ds.test),
    };
    let m = evaluate(&bb, Some(&e), data)?;
    println!("{}", json!({ "task": task, "split": name, "accuracy": m.accuracy, "loss": m.loss }));
    Ok(())
}

fn fsck(rc: &RunConfig) -> Result<()> {
    let reg = open(rc)?;
    let problems = reg.fsck();
    for p in &problems {
        println!("{p}");
    }
    if problems.is_empty() {
        println!("ok: {} tasks", reg.ids().len());
        Ok(())
    } else {
        Err(Error::Data(format!("fsck found {} problem(s)", problems.len())).into())
    }
}
