//! Checkpoint directories: model weights as CTEN files plus a TSV manifest,
//! the model config, optimizer moments, and scheduler state.
//!
//! Layout:
//! ```text
//! <dir>/model.txt          flat model config
//! <dir>/manifest.tsv       name \t file \t shape   (one line per parameter)
//! <dir>/<name>.cten        one tensor per parameter
//! <dir>/optim/opt.txt      step counter
//! <dir>/optim/m.<name>.cten, v.<name>.cten
//! <dir>/scheduler.txt      plateau scheduler state + epoch
//! ```

use std::fs;
use std::path::Path;

use crate::config::{model_from_kv, model_to_kv, KvFile};
use crate::data::{read_cten, write_atomic, write_cten};
use crate::error::{Error, Result};
use crate::model::{build_model, Model};
use crate::tensor::Tensor;
use crate::train::{AdamState, PlateauScheduler};

pub const WEIGHTS_MANIFEST: &str = "manifest.tsv";
pub const MODEL_CONFIG_FILE: &str = "model.txt";
pub const SCHEDULER_FILE: &str = "scheduler.txt";

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::config(format!("bad shape component '{s}' in weight manifest")))
        })
        .collect()
}

/// Writes a complete checkpoint. All files land atomically.
pub fn save(
    dir: &Path,
    model: &Model<f32>,
    optim: &AdamState<f32>,
    scheduler: &PlateauScheduler,
    epoch: usize,
    best_val_loss: Option<f64>,
) -> Result<()> {
    fs::create_dir_all(dir.join("optim"))?;

    write_atomic(
        &dir.join(MODEL_CONFIG_FILE),
        model_to_kv(&model.cfg).as_bytes(),
    )?;

    let mut manifest = String::new();
    for (name, tensor) in model.named_params() {
        let file = format!("{name}.cten");
        manifest.push_str(&format!("{name}\t{file}\t{}\n", shape_string(tensor.shape())));
        write_cten(&dir.join(&file), tensor)?;
    }
    write_atomic(&dir.join(WEIGHTS_MANIFEST), manifest.as_bytes())?;

    write_atomic(
        &dir.join("optim/opt.txt"),
        format!("t = {}\n", optim.t).as_bytes(),
    )?;
    for (name, m, v) in &optim.moments {
        write_cten(&dir.join(format!("optim/m.{name}.cten")), m)?;
        write_cten(&dir.join(format!("optim/v.{name}.cten")), v)?;
    }

    let best = match scheduler.best {
        Some(b) => b.to_string(),
        None => "none".to_string(),
    };
    let best_val = match best_val_loss {
        Some(b) => b.to_string(),
        None => "none".to_string(),
    };
    let sched = format!(
        "lr = {}\nbest = {best}\nstalled = {}\npatience = {}\nmin_delta = {}\nmin_lr = {}\nepoch = {epoch}\nbest_val_loss = {best_val}\n",
        scheduler.lr, scheduler.stalled, scheduler.patience, scheduler.min_delta, scheduler.min_lr
    );
    write_atomic(&dir.join(SCHEDULER_FILE), sched.as_bytes())?;
    Ok(())
}

/// Rebuilds the model from `model.txt` and overwrites every parameter from its
/// CTEN file. A manifest/model disagreement is a config error naming the first
/// mismatched layer.
pub fn load_model(dir: &Path) -> Result<Model<f32>> {
    let config_text = fs::read_to_string(dir.join(MODEL_CONFIG_FILE)).map_err(|e| {
        Error::config(format!(
            "cannot read {}: {e}",
            dir.join(MODEL_CONFIG_FILE).display()
        ))
    })?;
    let cfg = model_from_kv(&config_text)?;
    let mut model = build_model::<f32>(&cfg)?;

    let manifest_text = fs::read_to_string(dir.join(WEIGHTS_MANIFEST)).map_err(|e| {
        Error::config(format!(
            "cannot read {}: {e}",
            dir.join(WEIGHTS_MANIFEST).display()
        ))
    })?;

    let mut assigned = 0usize;
    for (i, line) in manifest_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::config(format!(
                "weight manifest line {}: expected 'name\\tfile\\tshape'",
                i + 1
            )));
        }
        let (name, file, shape_text) = (parts[0], parts[1], parts[2]);
        let shape = parse_shape(shape_text)?;

        let mut params = model.named_params_mut();
        let Some((_, tensor)) = params.iter_mut().find(|(n, _)| n == name) else {
            return Err(Error::config(format!(
                "weight manifest names unknown layer '{name}'"
            )));
        };
        if tensor.shape() != shape.as_slice() {
            return Err(Error::config(format!(
                "layer '{name}': checkpoint shape {} does not match model shape {}",
                shape_string(&shape),
                shape_string(tensor.shape())
            )));
        }
        let loaded: Tensor<f32> = read_cten(&dir.join(file))?;
        if loaded.shape() != shape.as_slice() {
            return Err(Error::config(format!(
                "layer '{name}': file {file} holds shape {} but manifest says {}",
                shape_string(loaded.shape()),
                shape_string(&shape)
            )));
        }
        **tensor = loaded;
        assigned += 1;
    }

    let expected = model.named_params().len();
    if assigned != expected {
        return Err(Error::config(format!(
            "weight manifest covers {assigned} of {expected} model layers"
        )));
    }
    Ok(model)
}

/// A fully reloaded training checkpoint.
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optim: AdamState<f32>,
    pub scheduler: PlateauScheduler,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let model = load_model(dir)?;

    let opt_text = fs::read_to_string(dir.join("optim/opt.txt"))
        .map_err(|e| Error::config(format!("cannot read optimizer state: {e}")))?;
    let opt_kv = KvFile::parse(&opt_text)?;
    let t: u64 = opt_kv
        .get("t")
        .ok_or_else(|| Error::config("optimizer state is missing 't'".to_string()))?
        .parse()
        .map_err(|_| Error::config("optimizer 't' is not an integer".to_string()))?;
    let mut moments = Vec::new();
    for (name, tensor) in model.named_params() {
        let m: Tensor<f32> = read_cten(&dir.join(format!("optim/m.{name}.cten")))?;
        let v: Tensor<f32> = read_cten(&dir.join(format!("optim/v.{name}.cten")))?;
        if m.shape() != tensor.shape() || v.shape() != tensor.shape() {
            return Err(Error::config(format!(
                "optimizer moments for '{name}' do not match the parameter shape"
            )));
        }
        moments.push((name, m, v));
    }

    let sched_text = fs::read_to_string(dir.join(SCHEDULER_FILE))
        .map_err(|e| Error::config(format!("cannot read scheduler state: {e}")))?;
    let kv = KvFile::parse(&sched_text)?;
    let get = |key: &str| -> Result<&str> {
        kv.get(key)
            .ok_or_else(|| Error::config(format!("scheduler state is missing '{key}'")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::config(format!("scheduler '{key}' is not a number")))
    };
    let parse_opt = |key: &str| -> Result<Option<f64>> {
        let v = get(key)?;
        if v == "none" {
            Ok(None)
        } else {
            v.parse()
                .map(Some)
                .map_err(|_| Error::config(format!("scheduler '{key}' is not a number")))
        }
    };
    let scheduler = PlateauScheduler {
        lr: parse_f64("lr")?,
        best: parse_opt("best")?,
        stalled: get("stalled")?
            .parse()
            .map_err(|_| Error::config("scheduler 'stalled' is not an integer".to_string()))?,
        patience: get("patience")?
            .parse()
            .map_err(|_| Error::config("scheduler 'patience' is not an integer".to_string()))?,
        min_delta: parse_f64("min_delta")?,
        min_lr: parse_f64("min_lr")?,
    };
    let epoch: usize = get("epoch")?
        .parse()
        .map_err(|_| Error::config("scheduler 'epoch' is not an integer".to_string()))?;
    let best_val_loss = parse_opt("best_val_loss")?;

    Ok(Checkpoint {
        model,
        optim: AdamState { t, moments },
        scheduler,
        epoch,
        best_val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_hw: 32,
            stem_channels: 2,
            stage_channels: vec![4],
            scr_dilation: 2,
            aspp: crate::model::AsppConfig {
                branch_channels: 2,
                dilation_rates: vec![2],
                include_image_pool: true,
                project_channels: 4,
            },
            seed: 9,
        }
    }

    #[test]
    fn save_and_load_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_model::<f32>(&tiny_config()).unwrap();
        let optim = AdamState::for_model(&model);
        let sched = PlateauScheduler::new(0.001, 3, 1e-4, 1e-6);
        save(dir.path(), &model, &optim, &sched, 5, Some(0.25)).unwrap();

        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.epoch, 5);
        assert_eq!(loaded.best_val_loss, Some(0.25));
        assert_eq!(loaded.scheduler.lr, 0.001);
        assert_eq!(loaded.optim.t, 0);
        for ((_, a), (_, b)) in model.named_params().iter().zip(loaded.model.named_params()) {
            assert!(a.bits_eq(b));
        }
    }

    #[test]
    fn mismatched_shapes_name_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_model::<f32>(&tiny_config()).unwrap();
        let optim = AdamState::for_model(&model);
        let sched = PlateauScheduler::new(0.001, 3, 1e-4, 1e-6);
        save(dir.path(), &model, &optim, &sched, 1, None).unwrap();

        // Rewrite model.txt with a different stem width; stem.weight no longer fits.
        let mut cfg = tiny_config();
        cfg.stem_channels = 3;
        write_atomic(
            &dir.path().join(MODEL_CONFIG_FILE),
            model_to_kv(&cfg).as_bytes(),
        )
        .unwrap();

        let err = load_model(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("stem.weight"));
    }

    #[test]
    fn corrupt_cten_reports_file_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_model::<f32>(&tiny_config()).unwrap();
        let optim = AdamState::for_model(&model);
        let sched = PlateauScheduler::new(0.001, 3, 1e-4, 1e-6);
        save(dir.path(), &model, &optim, &sched, 1, None).unwrap();

        let victim = dir.path().join("stem.weight.cten");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = b'X';
        fs::write(&victim, &bytes).unwrap();

        let err = load_model(dir.path()).unwrap_err();
        match err {
            Error::Parse { offset, message } => {
                assert_eq!(offset, 0);
                assert!(message.contains("stem.weight.cten"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
