use std::path::{Path, PathBuf};

use ordimpute::data::{load_cohort, make_splits, Cohort, Manifest};
use ordimpute::evaluation::{
    adjacent_comparisons, downstream_classify, export_embeddings as write_embeddings_csv,
    save_stats_csv,
};
use ordimpute::imputation::{impute as impute_cohort, ImputedCohort};
use ordimpute::model::{load_checkpoint, save_checkpoint, Checkpoint};
use ordimpute::training::train as train_models;

use crate::config::{RunConfig, TrainSubjects};
use crate::CliError;

pub struct Context {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }

    fn input(&self, p: &Path) -> Result<PathBuf, CliError> {
        let path = self.path(p);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Missing(path))
        }
    }

    fn cohort(&self) -> Result<Cohort, CliError> {
        let features = self.input(&self.config.paths.features)?;
        let manifest = self.input(&self.config.paths.manifest)?;
        Ok(load_cohort(&features, &manifest)?)
    }

    fn checkpoint(&self, manifest: &Manifest) -> Result<Checkpoint, CliError> {
        let path = self.input(&self.config.paths.checkpoint)?;
        Ok(load_checkpoint(&path, Some(manifest))?)
    }

    fn imputed(&self, manifest: &Manifest) -> Result<ImputedCohort, CliError> {
        let features = self.input(&self.config.paths.imputed)?;
        let provenance = self.input(&self.config.paths.provenance)?;
        let cohort = Cohort::from_csv_reader(open(&features)?, manifest)?;
        Ok(ImputedCohort::from_provenance_reader(
            cohort,
            open(&provenance)?,
        )?)
    }
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, CliError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let spec = ctx.config.synthetic.to_spec(ctx.config.seed)?;
    let (cohort, truth) = ordimpute::data::generate_synthetic(&spec)?;
    let paths = &ctx.config.paths;
    spec.manifest.save(&ctx.path(&paths.manifest))?;
    cohort.save_csv(&ctx.path(&paths.features))?;
    truth.complete.save_csv(&ctx.path(&paths.ground_truth))?;
    eprintln!(
        "generated {} subjects ({} incomplete)",
        cohort.len(),
        cohort.incomplete_subjects().len()
    );
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let cohort = ctx.cohort()?;
    let training = match ctx.config.train_subjects {
        TrainSubjects::All => cohort.clone(),
        TrainSubjects::Incomplete => {
            let idx = cohort.incomplete_subjects();
            if idx.is_empty() {
                return Err(CliError::Config(
                    "train_subjects is `incomplete` but every subject is complete".into(),
                ));
            }
            cohort.subset(&idx)
        }
    };
    let models = train_models(&training, &ctx.config.train)?;
    let ckpt = Checkpoint::new(
        cohort.manifest(),
        ctx.config.train.clone(),
        models.encoder,
        models.classifier,
        models.decoder,
    );
    save_checkpoint(&ckpt, &ctx.path(&ctx.config.paths.checkpoint))?;
    models
        .encoder_log
        .save_csv(&ctx.dir.join("train_encoder_log.csv"))?;
    models
        .decoder_log
        .save_csv(&ctx.dir.join("train_decoder_log.csv"))?;
    Ok(())
}

pub fn impute(ctx: &Context) -> Result<(), CliError> {
    let cohort = ctx.cohort()?;
    let ckpt = ctx.checkpoint(cohort.manifest())?;
    let out = impute_cohort(&cohort, &ckpt.encoder, &ckpt.decoder)?;
    out.cohort.save_csv(&ctx.path(&ctx.config.paths.imputed))?;
    out.save_provenance_csv(&ctx.path(&ctx.config.paths.provenance))?;
    eprintln!("imputed {} modality vectors", out.num_filled());
    Ok(())
}

pub fn eval_stats(ctx: &Context) -> Result<(), CliError> {
    let cohort = ctx.cohort()?;
    let alpha = ctx.config.eval.alpha;
    let before = adjacent_comparisons(&cohort, alpha)?;
    save_stats_csv(&before, &ctx.dir.join("stats_before.csv"))?;
    let mut summary = String::from("modality,comparison,n_before,n_after,n_common\n");
    if ctx.config.eval.no_imputation {
        for b in &before {
            summary.push_str(&format!(
                "{},{},{},,\n",
                b.modality,
                b.comparison_name(),
                b.n_significant
            ));
        }
    } else {
        let imputed = ctx.imputed(cohort.manifest())?;
        let after = adjacent_comparisons(&imputed.cohort, alpha)?;
        save_stats_csv(&after, &ctx.dir.join("stats_after.csv"))?;
        for (b, a) in before.iter().zip(&after) {
            summary.push_str(&format!(
                "{},{},{},{},{}\n",
                b.modality,
                b.comparison_name(),
                b.n_significant,
                a.n_significant,
                b.common_with(a)
            ));
        }
    }
    write_file(&ctx.dir.join("stats_summary.csv"), summary.as_bytes())
}

pub fn eval_classify(ctx: &Context) -> Result<(), CliError> {
    let cohort = ctx.cohort()?;
    let eval = &ctx.config.eval;
    let plan = make_splits(&cohort, eval.folds, ctx.config.seed)?;
    let imputed = if eval.no_imputation {
        None
    } else {
        Some(ctx.imputed(cohort.manifest())?)
    };
    let report = downstream_classify(&cohort, &plan, imputed.as_ref(), &eval.classifier)?;
    let mut json =
        serde_json::to_vec_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    json.push(b'\n');
    write_file(&ctx.dir.join("classification_report.json"), &json)?;
    eprintln!(
        "accuracy {:.4} +/- {:.4}",
        report.mean.accuracy, report.std.accuracy
    );
    Ok(())
}

pub fn export_embeddings(ctx: &Context) -> Result<(), CliError> {
    let cohort = ctx.cohort()?;
    let ckpt = ctx.checkpoint(cohort.manifest())?;
    Ok(write_embeddings_csv(
        &cohort,
        &ckpt.encoder,
        &ctx.dir.join("embeddings.csv"),
    )?)
}
