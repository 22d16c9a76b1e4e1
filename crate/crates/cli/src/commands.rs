use std::fmt::Write as _;
use std::path::Path;

use artaug::analysis::{default_edges, gradient_magnitude, local_entropy, to_grayscale, EdgeMap, ScalarMap};
use artaug::backend::{BackendConfig, GenerationBackend, RemoteBackend, RemoteConfig};
use artaug::balance::{build_plan, AugmentationPlan};
use artaug::compositor::PlacementSpec;
use artaug::dataset::{load_dataset, Dataset, LoadedDataset, SplitSpec};
use artaug::evaluator::{ground_truth, load_detections, map_coco, mean_std};
use artaug::io::{load_rgb, save_png_gray, save_png_rgb, write_atomic};
use artaug::mask::{OpbgConfig, StrategyKind};
use artaug::pipeline::{self, emit_manifests, DatasetRef, PromptTemplate, RunConfig, RunOutput, StrategyParams};
use image::Rgb;

use crate::{
    AugmentArgs, BackendArgs, BackendKind, BalanceArgs, Command, DataArgs, EvaluateArgs, Failure, IngestArgs, ManifestArgs,
    MaskArgs, StatsArgs, StrategyArgs, VisualKind, VisualizeArgs, BACKEND_URL_ENV,
};

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats(a),
        Command::Mask(a) => mask(a),
        Command::Augment(a) => augment(a),
        Command::Balance(a) => balance(a),
        Command::Manifest(a) => manifest(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Visualize(a) => visualize(a),
    }
}

fn load(data: &DataArgs, strict: bool) -> Result<LoadedDataset, Failure> {
    let loaded = load_dataset(&data.annotations, &data.images, strict)?;
    for c in &loaded.clamped {
        log::warn!("{c}");
    }
    Ok(loaded)
}

fn read_document(path: &Path) -> Result<Dataset, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let (ds, clamped) = Dataset::from_coco_str(&text).map_err(|e| Failure::from(artaug::Error::from(e)))?;
    for c in clamped {
        log::warn!("{c}");
    }
    Ok(ds)
}

fn ingest(a: IngestArgs) -> Outcome {
    let loaded = load(&a.data, a.strict)?;
    let ds = &loaded.dataset;
    println!(
        "{} images, {} annotations, {} categories; {} boxes clamped, {} unreadable images",
        ds.images().len(),
        ds.annotations().len(),
        ds.categories().len(),
        loaded.clamped.len(),
        loaded.unreadable_images.len()
    );
    if let (Some(frac), Some(out)) = (a.val_fraction, a.out.as_deref()) {
        let spec = SplitSpec::new(frac, a.seed)?;
        let (train, val) = ds.split(&spec)?;
        train.write_coco(&out.join("train.json"))?;
        val.write_coco(&out.join("val.json"))?;
        println!("split seed {}: {} train / {} val images -> {}", a.seed, train.images().len(), val.images().len(), out.display());
    }
    Ok(())
}

fn stats_text(ds: &Dataset, plan: &AugmentationPlan) -> String {
    let mut out = String::from("category_id\tname\tinstances\taugs_per_instance\tplanned\ttotal\n");
    for c in ds.categories() {
        let e = plan.entries.get(&c.id).copied().unwrap_or_default();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.id,
            c.name,
            e.current,
            e.augs_per_instance,
            e.planned_synthetic,
            e.post_balance_total()
        );
    }
    let _ = writeln!(
        out,
        "total\t\t{}\t\t{}\t{}",
        ds.annotations().len(),
        plan.total_planned(),
        ds.annotations().len() as u64 + plan.total_planned()
    );
    out
}

fn stats(a: StatsArgs) -> Outcome {
    let ds = read_document(&a.annotations)?;
    let plan = build_plan(&ds);
    print!("{}", stats_text(&ds, &plan));
    if let Some(p) = a.plan_csv {
        write_atomic(&p, plan.to_csv(&ds).as_bytes())?;
    }
    Ok(())
}

fn strategy_params(p: &StrategyArgs) -> Result<StrategyParams, Failure> {
    let defaults = PromptTemplate::default();
    let template = PromptTemplate::new(
        p.prompt.clone().unwrap_or(defaults.positive),
        p.negative_prompt.clone().unwrap_or(defaults.negative),
    )?;
    let opbg = OpbgConfig { coverage: p.coverage, ..OpbgConfig::default() };
    opbg.validate()?;
    Ok(StrategyParams {
        entropy_window: p.entropy_window,
        opbg,
        border_margin_frac: p.border_margin,
        feather: p.feather,
        steps: p.steps,
        guidance: p.guidance,
        template,
        ..StrategyParams::default()
    })
}

fn backend_config(b: &BackendArgs) -> Result<BackendConfig, Failure> {
    match b.backend {
        BackendKind::Mock => Ok(BackendConfig::Mock),
        BackendKind::Remote => {
            let url = b
                .backend_url
                .clone()
                .ok_or_else(|| Failure::validation(format!("--backend remote needs --backend-url or {BACKEND_URL_ENV}")))?;
            let mut cfg = RemoteConfig::new(url);
            cfg.timeout_ms = b.timeout_ms;
            cfg.max_retries = b.max_retries;
            cfg.max_in_flight = b.max_in_flight;
            cfg.validate()?;
            Ok(BackendConfig::Remote(cfg))
        }
    }
}

fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn GenerationBackend>, Failure> {
    if let BackendConfig::Remote(remote) = cfg {
        let probe = RemoteBackend::new(remote.clone())?;
        match probe.health() {
            Ok(h) if h.healthy => log::info!("backend {} healthy: {}", remote.base_url, h.status),
            Ok(h) => return Err(Failure::backend(format!("backend {} not ready: {}", remote.base_url, h.status))),
            Err(e) => return Err(Failure::backend(format!("backend {} unreachable: {e}", remote.base_url))),
        }
    }
    Ok(cfg.build()?)
}

fn finish(command: &str, cfg: &RunConfig, out: &RunOutput) -> Outcome {
    let r = &out.report;
    println!(
        "{command}: {} images, {} annotations written to {} ({} resumed, {} failed)",
        out.dataset.images().len(),
        out.dataset.annotations().len(),
        cfg.output_dir.display(),
        r.resumed,
        r.failures.len()
    );
    if r.has_backend_failures() {
        return Err(Failure::backend(format!("{} item(s) failed in the backend; see report.txt", r.failures.len())));
    }
    if !r.failures.is_empty() {
        return Err(Failure::validation(format!("{} item(s) failed; see report.txt", r.failures.len())));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))
}

fn augment(a: AugmentArgs) -> Outcome {
    let loaded = load(&a.data, false)?;
    let mut cfg = RunConfig::new(a.strategy, a.seed, &a.out);
    cfg.workers = a.workers;
    cfg.params = strategy_params(&a.params)?;
    cfg.backend = backend_config(&a.backend)?;
    create_dir(&a.out)?;
    pipeline::write_run_header(&cfg, "augment")?;
    let backend = build_backend(&cfg.backend)?;
    let out = pipeline::augment(&loaded.dataset, &loaded.image_root, &cfg, backend.as_ref())?;
    finish("augment", &cfg, &out)
}

fn balance(a: BalanceArgs) -> Outcome {
    let loaded = load(&a.data, false)?;
    let mut cfg = RunConfig::new(StrategyKind::Edge, a.seed, &a.out);
    cfg.workers = a.workers;
    cfg.params = strategy_params(&a.params)?;
    cfg.params.placement =
        PlacementSpec { canvas_size: (a.canvas_size, a.canvas_size), max_per_canvas: a.per_canvas, ..PlacementSpec::default() };
    cfg.params.placement.validate()?;
    cfg.backend = backend_config(&a.backend)?;
    create_dir(&a.out)?;
    pipeline::write_run_header(&cfg, "balance")?;

    let plan = build_plan(&loaded.dataset);
    write_atomic(&a.out.join("plan.csv"), plan.to_csv(&loaded.dataset).as_bytes())?;
    let short = plan.shortfalls(a.min_target);
    let mut text = format!("classes below {} after balancing: {}\n", a.min_target, short.len());
    for (cat, e) in &short {
        let name = loaded.dataset.category(*cat).map_or("", |c| c.name.as_str());
        let _ = writeln!(text, "{cat}\t{name}\t{} + {} = {}", e.current, e.planned_synthetic, e.post_balance_total());
        log::warn!("category {cat} ({name}) ends at {} < {}", e.post_balance_total(), a.min_target);
    }
    write_atomic(&a.out.join("shortfalls.txt"), text.as_bytes())?;

    let backend = build_backend(&cfg.backend)?;
    let out = pipeline::run_balance(&loaded.dataset, &loaded.image_root, &plan, &cfg, backend.as_ref())?;
    finish("balance", &cfg, &out)
}

fn mask(a: MaskArgs) -> Outcome {
    let loaded = load(&a.data, false)?;
    let mut cfg = RunConfig::new(a.strategy, a.seed, &a.out);
    cfg.params = strategy_params(&a.params)?;
    create_dir(&a.out.join("masks"))?;
    pipeline::write_run_header(&cfg, "mask")?;
    let rows = pipeline::preview_masks(&loaded.dataset, &loaded.image_root, &cfg)?;
    let mut report = format!("# {} masks, seed {}\nimage_id\tmasks\tmasked_fraction\tcontiguity\n", a.strategy, a.seed);
    for (id, m, row) in &rows {
        save_png_gray(&a.out.join("masks").join(format!("{id}.png")), &m.to_gray_image())?;
        let _ = writeln!(report, "{id}\t{}\t{:.4}\t{:.4}", row.masks, row.masked_fraction, row.contiguity);
    }
    write_atomic(&a.out.join(pipeline::REPORT_FILE), report.as_bytes())?;
    println!("mask: {} mask images written to {}", rows.len(), a.out.join("masks").display());
    Ok(())
}

fn manifest(a: ManifestArgs) -> Outcome {
    let real = read_document(&a.real)?;
    let syn: Vec<Dataset> = a.synthetic.iter().map(|p| read_document(p)).collect::<Result<_, _>>()?;
    let real_path = a.real.to_string_lossy().into_owned();
    let syn_paths: Vec<String> = a.synthetic.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    let refs: Vec<DatasetRef> = syn_paths.iter().zip(&syn).map(|(p, d)| DatasetRef::new(p, d)).collect();
    let split = a.val_fraction.map(|f| SplitSpec::new(f, a.seed)).transpose()?;
    let m = emit_manifests(DatasetRef::new(&real_path, &real), &refs, a.scheme, split)?;
    write_atomic(&a.out, m.to_json().as_bytes())?;
    println!("manifest: {:?}, {} stage(s), real : synthetic = {}", a.scheme, m.stages.len(), m.ratio_label);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let gt_ds = read_document(&a.gt)?;
    let gts = ground_truth(&gt_ds);
    let mut text = String::new();
    let mut scores = Vec::new();
    for p in &a.pred {
        let dets = load_detections(p)?;
        let res = map_coco(&dets, &gts)?;
        if a.pred.len() > 1 {
            let _ = writeln!(text, "# {}", p.display());
        }
        text.push_str(&res.to_text(Some(&gt_ds)));
        scores.push(res.map_50_95);
    }
    if scores.len() > 1 {
        let (mean, std) = mean_std(&scores);
        let _ = writeln!(text, "map_50_95 over {} runs = {mean:.4} ± {std:.4}", scores.len());
    }
    print!("{text}");
    if let Some(out) = a.out {
        write_atomic(&out, text.as_bytes())?;
    }
    Ok(())
}

fn visualize(a: VisualizeArgs) -> Outcome {
    let loaded = load(&a.data, false)?;
    let ds = &loaded.dataset;
    create_dir(&a.out)?;
    let tag = format!("{:?}", a.what).to_lowercase();
    if a.what == VisualKind::Masks {
        let strategy = a.strategy.ok_or_else(|| Failure::validation("--what masks needs --strategy"))?;
        let mut cfg = RunConfig::new(strategy, a.seed, &a.out);
        cfg.params = strategy_params(&a.params)?;
        for (id, m, _) in pipeline::preview_masks(ds, &loaded.image_root, &cfg)? {
            let record = ds.image(id).expect("mask for a known image");
            let mut img = load_rgb(&loaded.image_root.join(&record.file_name))?;
            for (x, y, p) in img.enumerate_pixels_mut() {
                if m.get(x, y) {
                    *p = Rgb([p[0] / 2 + 127, p[1] / 2, p[2] / 2]);
                }
            }
            save_png_rgb(&a.out.join(format!("{tag}_{id}.png")), &img)?;
        }
        println!("visualize: {} overlays written to {}", ds.images().len(), a.out.display());
        return Ok(());
    }
    for record in ds.images() {
        let gray = to_grayscale(&load_rgb(&loaded.image_root.join(&record.file_name))?);
        let rendered = match a.what {
            VisualKind::Entropy => {
                let m: ScalarMap<f32> = local_entropy(&gray, a.params.entropy_window)?;
                m.to_gray_image(Some(8.0))
            }
            VisualKind::Saliency => {
                let m: ScalarMap<f32> = gradient_magnitude(&gray)?;
                m.to_gray_image(None)
            }
            VisualKind::Edges => {
                let e: EdgeMap<f32> = default_edges(&gray)?;
                e.to_gray_image()
            }
            VisualKind::Masks => unreachable!("handled above"),
        };
        save_png_gray(&a.out.join(format!("{tag}_{}.png", record.id)), &rendered)?;
    }
    println!("visualize: {} {tag} images written to {}", ds.images().len(), a.out.display());
    Ok(())
}
