use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::json;

use super::{
    DcaArgs, DistillArgs, FeatureSource, HierarchyArgs, HierarchyMethod, KindArg, PlanArgs, ProbeArgs, ScoreArgs,
    SynthArgs, ValidateArgs,
};
use crate::dca::{
    combined_loss, dca_components, inter_kd_loss, linear_probe, output_kd_loss, pca_components, project, DcaProjection,
};
use crate::error::{Error, Result};
use crate::hierarchy::{
    apply_mapping, class_centroids, confusion_matrix, kmeans_mapping, spectral_mapping, CoarseMapping, ConfusionMatrix,
};
use crate::metrics::{score_layer, ChannelScoreReport, MetricParams};
use crate::planner::{build_plan, LayerReports, PlanConfig};
use crate::synth::{synth_run, SynthRunConfig};
use crate::tensor_io::{load_features, load_labels, load_matrix, ActivationSet, ClassLabels, LabelScheme, RunBundle};

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Labels under the fine scheme, or coarse labels when a mapping is given.
fn labels_for(
    fine: &[usize],
    num_fine: usize,
    mapping: Option<&CoarseMapping>,
    name: Option<&str>,
) -> Result<ClassLabels> {
    match mapping {
        None => ClassLabels::new(LabelScheme::fine(num_fine).named(name.unwrap_or("fine")), fine.to_vec()),
        Some(q) => {
            if q.num_fine != num_fine {
                return Err(Error::SchemeMismatch(format!(
                    "mapping covers {} fine classes, data has {num_fine}",
                    q.num_fine
                )));
            }
            ClassLabels::new(
                LabelScheme::coarse(q.num_coarse).named(name.unwrap_or("coarse")),
                apply_mapping(fine, q)?,
            )
        }
    }
}

fn load_mapping(path: Option<&Path>) -> Result<Option<CoarseMapping>> {
    path.map(CoarseMapping::load).transpose()
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let bundle = RunBundle::open(&a.run)?;
    let mapping = load_mapping(a.mapping.as_deref())?;
    let params = MetricParams {
        eps: a.eps,
        sigma: a.sigma,
        rho: a.rho,
        seed: a.seed,
    };
    let metric = a.metric.into();
    params.validate(metric)?;
    let layers: Vec<String> = if a.layers.is_empty() {
        bundle.layers().to_vec()
    } else {
        a.layers.clone()
    };
    fs::create_dir_all(&a.out)?;
    for layer in &layers {
        let acts = bundle.load_layer(layer)?;
        let labels = labels_for(
            acts.labels(),
            acts.num_classes(),
            mapping.as_ref(),
            a.scheme_name.as_deref(),
        )
        .map_err(|e| e.in_layer(layer))?;
        let report = score_layer(layer, metric, &acts, &labels, &params).map_err(|e| e.in_layer(layer))?;
        fs::write(a.out.join(format!("{layer}.json")), report.to_json()?)?;
    }
    Ok(())
}

pub fn hierarchy(a: &HierarchyArgs) -> Result<()> {
    let base = load_mapping(a.from_mapping.as_deref())?;
    let (mapping, num_samples) = match a.method {
        HierarchyMethod::Kmeans => {
            let run = a
                .run
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("--method kmeans needs --run".into()))?;
            let bundle = RunBundle::open(run)?;
            let layer = match &a.layer {
                Some(l) => l.clone(),
                None => bundle.layers().last().cloned().expect("manifest has layers"),
            };
            let acts = bundle.load_layer(&layer)?;
            let n = acts.num_samples();
            let acts = match &base {
                None => acts,
                Some(q) => {
                    let coarse = labels_for(acts.labels(), acts.num_classes(), Some(q), None)?;
                    ActivationSet::new(
                        acts.data().to_vec(),
                        acts.shape(),
                        coarse.labels().to_vec(),
                        q.num_coarse,
                    )?
                }
            };
            let centroids = class_centroids(&acts).map_err(|e| e.in_layer(&layer))?;
            (kmeans_mapping(&centroids, a.coarse_classes, a.seed)?, Some(n))
        }
        HierarchyMethod::Spectral => {
            let (m, n) = match (&a.confusion, &a.run) {
                (Some(p), _) => (ConfusionMatrix::load(p)?, None),
                (None, Some(run)) => {
                    let bundle = RunBundle::open(run)?;
                    let logits = bundle.load_logits()?;
                    let f = bundle.manifest().num_classes.unwrap_or(logits.num_classes());
                    (confusion_matrix(&logits, f)?, Some(logits.labels().len()))
                }
                (None, None) => {
                    return Err(Error::InvalidParameter(
                        "--method spectral needs --confusion or --run".into(),
                    ))
                }
            };
            let n = n.or(Some(m.total() as usize));
            let m = match &base {
                None => m,
                Some(q) => m.coarsen(q)?,
            };
            (spectral_mapping(&m, a.coarse_classes, a.seed)?, n)
        }
    };
    let mut mapping = match &base {
        None => mapping,
        Some(q) => q.compose(&mapping)?,
    };
    mapping.num_samples = num_samples;
    mapping.save(&a.out)
}

fn load_reports(dir: Option<&Path>, layers: &[String]) -> Result<Vec<Option<ChannelScoreReport>>> {
    layers
        .iter()
        .map(|layer| match dir {
            None => Ok(None),
            Some(d) => {
                let path = d.join(format!("{layer}.json"));
                if !path.exists() {
                    return Ok(None);
                }
                let text = fs::read_to_string(&path)?;
                ChannelScoreReport::from_json(&text)
                    .map(Some)
                    .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))
            }
        })
        .collect()
}

pub fn plan(a: &PlanArgs) -> Result<()> {
    let bundle = RunBundle::open(&a.run)?;
    let layers = bundle.layers();
    let fine = load_reports(a.fine.as_deref(), layers)?;
    let coarse = load_reports(a.coarse.as_deref(), layers)?;
    let coarsest = load_reports(a.coarsest.as_deref(), layers)?;
    let reports: Vec<LayerReports> = layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerReports {
            layer: l.clone(),
            fine: fine[i].clone(),
            coarse: coarse[i].clone(),
            coarsest: coarsest[i].clone(),
        })
        .collect();
    let cfg = PlanConfig {
        mode: a.mode.into(),
        alpha: a.alpha,
        ratios: a.ratio.clone(),
        rounding: a.rounding.into(),
    };
    let plan = build_plan(&reports, &cfg)?;
    fs::write(&a.out, plan.to_json()?)?;
    Ok(())
}

/// Flattened features with their (possibly coarsened) labels.
fn load_source(src: &FeatureSource) -> Result<(DMatrix<f64>, ClassLabels)> {
    let mapping = load_mapping(src.mapping.as_deref())?;
    let (features, fine, num_fine) = match (&src.run, &src.features) {
        (Some(run), None) => {
            let bundle = RunBundle::open(run)?;
            let layer = src
                .layer
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("--run needs --layer".into()))?;
            let acts = bundle.load_layer(layer)?;
            (acts.flatten(), acts.labels().to_vec(), acts.num_classes())
        }
        (None, Some(path)) => {
            let labels_path = src
                .labels
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("--features needs --labels".into()))?;
            let features = load_features(path)?;
            let labels = load_labels(labels_path)?;
            if labels.len() != features.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    features.nrows()
                )));
            }
            let f = labels.iter().max().map_or(0, |m| m + 1);
            let f = mapping.as_ref().map_or(f, |q| q.num_fine.max(f));
            (features, labels, f)
        }
        _ => {
            return Err(Error::InvalidParameter(
                "give exactly one of --run/--layer or --features/--labels".into(),
            ))
        }
    };
    let labels = labels_for(&fine, num_fine, mapping.as_ref(), None)?;
    Ok((features, labels))
}

pub fn dca(a: &DcaArgs) -> Result<()> {
    let (features, labels) = load_source(&a.source)?;
    let proj = match a.kind {
        KindArg::Dca => {
            if a.components.is_some_and(|k| k != labels.num_classes()) {
                return Err(Error::InvalidParameter(
                    "DCA keeps one component per class; --components applies to PCA".into(),
                ));
            }
            dca_components(&features, labels.labels(), labels.scheme(), a.rho)?
        }
        KindArg::Pca => pca_components(&features, a.components.unwrap_or(labels.num_classes()))?,
    };
    proj.save(&a.out)
}

pub fn distill_loss(a: &DistillArgs) -> Result<()> {
    let w_t = DcaProjection::load(&a.teacher_proj)?;
    let w_s = DcaProjection::load(&a.student_proj)?;
    let a_t = load_features(&a.teacher)?;
    let a_s = load_features(&a.student)?;
    let inter = inter_kd_loss(&a_t, &w_t, &a_s, &w_s)?;
    let out = match (&a.teacher_logits, &a.student_logits) {
        (Some(t), Some(s)) => Some(output_kd_loss(&load_matrix(t)?, &load_matrix(s)?, a.temperature)?),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidParameter(
                "--teacher-logits and --student-logits go together".into(),
            ))
        }
    };
    for (name, v) in [("ce", a.ce), ("lambda", a.lambda), ("gamma", a.gamma)] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("--{name} must be finite")));
        }
    }
    let total = combined_loss(a.ce, inter, out.unwrap_or(0.0), a.lambda, a.gamma);
    write_json(
        &json!({
            "inter": inter,
            "out": out,
            "ce": a.ce,
            "lambda": a.lambda,
            "gamma": a.gamma,
            "temperature": a.temperature,
            "total": total,
        }),
        a.out.as_deref(),
    )
}

pub fn probe(a: &ProbeArgs) -> Result<()> {
    let (features, labels) = load_source(&a.source)?;
    let (x, kind) = match &a.projection {
        Some(p) => {
            let proj = DcaProjection::load(p)?;
            (project(&features, &proj)?, Some(proj.kind))
        }
        None => (features, None),
    };
    let res = linear_probe(&x, labels.labels(), labels.num_classes(), a.reg, a.seed)?;
    write_json(
        &json!({
            "accuracy": res.accuracy,
            "n_train": res.n_train,
            "n_test": res.n_test,
            "num_classes": labels.num_classes(),
            "scheme": labels.scheme(),
            "projection": kind,
            "dim": x.ncols(),
            "reg": a.reg,
            "seed": a.seed,
        }),
        a.out.as_deref(),
    )
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthRunConfig {
        num_layers: a.layers,
        fine_classes: a.fine_classes,
        coarse_groups: a.groups,
        n_per_class: a.n_per_class,
        channels: a.channels,
        hw: a.hw,
        seed: a.seed,
    };
    let run = synth_run(&a.out, &cfg)?;
    run.groups.save(&a.out.join("ground_truth.json"))
}

pub fn validate(a: &ValidateArgs) -> Result<()> {
    let bundle = RunBundle::open(&a.run)?;
    let labels = bundle.load_labels()?;
    let mut layers = Vec::new();
    for layer in bundle.layers() {
        let acts = bundle.load_layer(layer)?;
        layers.push(json!({ "name": layer, "shape": acts.shape() }));
    }
    let logits = if bundle.has_logits() {
        let l = bundle.load_logits()?;
        if let Some(f) = bundle.manifest().num_classes {
            if l.num_classes() != f {
                return Err(Error::ShapeMismatch(format!(
                    "logits have {} columns, manifest declares {f} classes",
                    l.num_classes()
                )));
            }
        }
        Some([l.logits().nrows(), l.logits().ncols()])
    } else {
        None
    };
    if let Some(n) = bundle.manifest().num_samples {
        if n != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "manifest declares {n} samples, labels.npy has {}",
                labels.len()
            )));
        }
    }
    write_json(
        &json!({
            "valid": true,
            "num_samples": labels.len(),
            "num_classes": bundle.manifest().num_classes.unwrap_or(labels.iter().max().map_or(0, |m| m + 1)),
            "layers": layers,
            "logits": logits,
            "errors": [],
        }),
        None,
    )
}
