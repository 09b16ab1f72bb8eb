use clap::Args;
use drdetect::classifier::{train, Mlp, TrainConfig};
use drdetect::numerics::RngStream;
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, overlay_opt};
use crate::data::{self, Split};
use crate::failure::{usage, CmdResult};
use crate::output::{sha256_file, Outputs};
use crate::Common;

pub const MODEL_FILE: &str = "model.drmlp";
pub const METRICS_FILE: &str = "train_metrics.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data: `mnist`, `mnist:<dir>`, `cifar:<dir>` or a DRSET file
    #[arg(long)]
    data: Option<String>,
    /// Held-out data [default: the test split of --data, if it has one]
    #[arg(long)]
    test_data: Option<String>,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Passes over the training data
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Number of output classes
    #[arg(long)]
    classes: Option<usize>,
    /// Train on the first N rows only
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub data: String,
    pub test_data: Option<String>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub classes: usize,
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: "mnist".into(),
            test_data: None,
            hidden: vec![128],
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            classes: 10,
            limit: None,
            seed: t.seed,
        }
    }
}

#[derive(Serialize)]
struct Metrics<'a> {
    config: &'a TrainParams,
    dims: &'a [usize],
    model_file: &'a str,
    model_sha256: String,
    train_samples: usize,
    train_accuracy: f64,
    test_samples: Option<usize>,
    test_accuracy: Option<f64>,
    loss_trace: &'a [f64],
}

pub fn run(args: &TrainArgs, common: &Common) -> CmdResult {
    let mut cfg: TrainParams = config::load(common.config.as_deref())?;
    overlay!(cfg, args; hidden, epochs, learning_rate, batch_size, classes);
    overlay!(cfg, common; seed);
    overlay_opt!(cfg, args; test_data, limit);
    if let Some(d) = &args.data {
        cfg.data = d.clone();
    }
    if cfg.hidden.contains(&0) {
        return Err(usage("hidden layer widths must be positive"));
    }

    let train_set = data::load(&cfg.data, Split::Train, cfg.limit)?;
    let test_spec = cfg
        .test_data
        .clone()
        .or_else(|| data::has_splits(&cfg.data).then(|| cfg.data.clone()));
    let test_set = test_spec
        .map(|spec| data::load(&spec, Split::Test, None))
        .transpose()?;

    let mut dims = vec![train_set.sample_len()];
    dims.extend(&cfg.hidden);
    dims.push(cfg.classes);
    let init = Mlp::new(&dims, &mut RngStream::new(cfg.seed, 1))?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let outcome = train(init, &train_set, &train_cfg)?;
    let model = outcome.model;

    let out = Outputs::new(&common.out_dir, !common.no_timestamp)?;
    let model_path = out.path(MODEL_FILE);
    model.save(&model_path)?;
    let train_accuracy = model.accuracy(&train_set)?;
    let test_accuracy = test_set.as_ref().map(|s| model.accuracy(s)).transpose()?;
    let metrics = Metrics {
        config: &cfg,
        dims: &dims,
        model_file: MODEL_FILE,
        model_sha256: sha256_file(&model_path)?,
        train_samples: train_set.len(),
        train_accuracy,
        test_samples: test_set.as_ref().map(|s| s.len()),
        test_accuracy,
        loss_trace: &outcome.loss_trace,
    };
    let path = out.json(METRICS_FILE, "train", &metrics)?;
    print!("trained {dims:?} on {} rows: train accuracy {train_accuracy:.4}", train_set.len());
    if let Some(acc) = test_accuracy {
        print!(", test accuracy {acc:.4}");
    }
    println!("\nwrote {} and {}", model_path.display(), path.display());
    Ok(())
}
