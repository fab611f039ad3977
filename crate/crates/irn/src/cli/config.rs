//! The run configuration: a flat, versioned key-value file, overridden by
//! command-line flags, materialized back to disk for provenance.
//!
//! Precedence, lowest to highest: built-in defaults, config file, flags.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::skeleton::folds::Protocol;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: i64 = 1;

/// Every key the flat config file may contain.
const KNOWN_KEYS: &[&str] = &[
    "version",
    "variant",
    "classes",
    "frames",
    "dims",
    "joints",
    "use_h",
    "one_hot_ids",
    "fuse_at",
    "lstm",
    "g_widths",
    "f_widths",
    "lstm_hidden",
    "dropout",
    "lr",
    "init_std",
    "batch_size",
    "epochs",
    "seed",
    "swap_augment",
    "val_fraction",
    "freeze_copied",
    "random_init",
    "dilation",
    "folds",
    "protocol",
    "train_subjects",
    "train_cameras",
    "train_setups",
];

/// A parsed config file: every field optional, absent keys fall through to
/// the defaults (or the manifest, for `classes`).
#[derive(Debug, Clone, Default)]
pub struct FileSettings {
    pub variant: Option<String>,
    pub classes: Option<usize>,
    pub frames: Option<usize>,
    pub dims: Option<usize>,
    pub joints: Option<usize>,
    pub use_h: Option<bool>,
    pub one_hot_ids: Option<bool>,
    pub fuse_at: Option<usize>,
    pub lstm: Option<bool>,
    pub g_widths: Option<Vec<usize>>,
    pub f_widths: Option<Vec<usize>>,
    pub lstm_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub init_std: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub swap_augment: Option<bool>,
    pub val_fraction: Option<f64>,
    pub freeze_copied: Option<bool>,
    pub random_init: Option<bool>,
    pub dilation: Option<usize>,
    pub folds: Option<usize>,
    pub protocol: Option<String>,
    pub train_subjects: Option<Vec<u32>>,
    pub train_cameras: Option<Vec<u32>>,
    pub train_setups: Option<Vec<u32>>,
}

fn config_err(file: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {msg}", file.display()))
}

impl FileSettings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| config_err(origin, format!("not valid TOML: {e}")))?;

        let mut unknown: Vec<&str> = table
            .keys()
            .map(String::as_str)
            .filter(|k| !KNOWN_KEYS.contains(k))
            .collect();
        unknown.sort_unstable();
        if !unknown.is_empty() {
            return Err(config_err(
                origin,
                format!("unknown config keys: {}", unknown.join(", ")),
            ));
        }

        let version = int(&table, "version", origin)?
            .ok_or_else(|| config_err(origin, "missing required key `version`"))?;
        if version != CONFIG_VERSION {
            return Err(config_err(
                origin,
                format!("config version {version} unsupported; expected {CONFIG_VERSION}"),
            ));
        }

        Ok(FileSettings {
            variant: string(&table, "variant", origin)?,
            classes: size(&table, "classes", origin)?,
            frames: size(&table, "frames", origin)?,
            dims: size(&table, "dims", origin)?,
            joints: size(&table, "joints", origin)?,
            use_h: boolean(&table, "use_h", origin)?,
            one_hot_ids: boolean(&table, "one_hot_ids", origin)?,
            fuse_at: size(&table, "fuse_at", origin)?,
            lstm: boolean(&table, "lstm", origin)?,
            g_widths: size_array(&table, "g_widths", origin)?,
            f_widths: size_array(&table, "f_widths", origin)?,
            lstm_hidden: size(&table, "lstm_hidden", origin)?,
            dropout: float(&table, "dropout", origin)?,
            lr: float(&table, "lr", origin)?,
            init_std: float(&table, "init_std", origin)?,
            batch_size: size(&table, "batch_size", origin)?,
            epochs: size(&table, "epochs", origin)?,
            seed: int(&table, "seed", origin)?.map(|v| v as u64),
            swap_augment: boolean(&table, "swap_augment", origin)?,
            val_fraction: float(&table, "val_fraction", origin)?,
            freeze_copied: boolean(&table, "freeze_copied", origin)?,
            random_init: boolean(&table, "random_init", origin)?,
            dilation: size(&table, "dilation", origin)?,
            folds: size(&table, "folds", origin)?,
            protocol: string(&table, "protocol", origin)?,
            train_subjects: id_array(&table, "train_subjects", origin)?,
            train_cameras: id_array(&table, "train_cameras", origin)?,
            train_setups: id_array(&table, "train_setups", origin)?,
        })
    }
}

fn int(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<i64>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(v)) => Ok(Some(*v)),
        Some(other) => Err(config_err(
            origin,
            format!("key `{key}` must be an integer, got {}", other.type_str()),
        )),
    }
}

fn size(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<usize>> {
    match int(table, key, origin)? {
        None => Ok(None),
        Some(v) if v >= 0 => Ok(Some(v as usize)),
        Some(v) => Err(config_err(
            origin,
            format!("key `{key}` must be non-negative, got {v}"),
        )),
    }
}

fn float(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Float(v)) => Ok(Some(*v)),
        Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
        Some(other) => Err(config_err(
            origin,
            format!("key `{key}` must be a number, got {}", other.type_str()),
        )),
    }
}

fn boolean(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<bool>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Boolean(v)) => Ok(Some(*v)),
        Some(other) => Err(config_err(
            origin,
            format!("key `{key}` must be a boolean, got {}", other.type_str()),
        )),
    }
}

fn string(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<String>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::String(v)) => Ok(Some(v.clone())),
        Some(other) => Err(config_err(
            origin,
            format!("key `{key}` must be a string, got {}", other.type_str()),
        )),
    }
}

fn size_array(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<Vec<usize>>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                toml::Value::Integer(i) if *i > 0 => Ok(*i as usize),
                other => Err(config_err(
                    origin,
                    format!("key `{key}` must list positive integers, got {other}"),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(other) => Err(config_err(
            origin,
            format!("key `{key}` must be an array, got {}", other.type_str()),
        )),
    }
}

fn id_array(table: &toml::Table, key: &str, origin: &Path) -> Result<Option<Vec<u32>>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                toml::Value::Integer(i) if *i >= 0 => Ok(*i as u32),
                other => Err(config_err(
                    origin,
                    format!("key `{key}` must list non-negative ids, got {other}"),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(other) => Err(config_err(
            origin,
            format!("key `{key}` must be an array, got {}", other.type_str()),
        )),
    }
}

/// Flag-level overrides; identical key set to the config file. Every field
/// is optional so that unset flags fall through to the file and defaults.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SettingsFlags {
    /// Path to a flat TOML run-configuration file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Model variant: inter | intra | fused | fc_fused | naive.
    #[arg(long)]
    pub variant: Option<String>,
    /// Number of classes (defaults to the dataset manifest).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Frames per window (T).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Coordinate dimensions per joint (2 or 3).
    #[arg(long)]
    pub dims: Option<usize>,
    /// Joints per person after subsampling.
    #[arg(long)]
    pub joints: Option<usize>,
    /// Append the distance/motion feature vector to each joint pair.
    #[arg(long)]
    pub use_h: Option<bool>,
    /// Encode joint and body-part ids as indicator vectors.
    #[arg(long)]
    pub one_hot_ids: Option<bool>,
    /// Fully connected layer index (1-based) at which the mid-network
    /// fusion variant joins its streams.
    #[arg(long)]
    pub fuse_at: Option<usize>,
    /// Run the recurrent head over overlapping windows.
    #[arg(long)]
    pub lstm: Option<bool>,
    /// Relation-network layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub g_widths: Option<Vec<usize>>,
    /// Post-pool layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub f_widths: Option<Vec<usize>>,
    /// Recurrent state size.
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    /// Dropout rate on post-pool hidden layers.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Truncated-normal initialization scale.
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Randomly exchange the two persons during training.
    #[arg(long)]
    pub swap_augment: Option<bool>,
    /// Share of the training set held out for model selection.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Freeze parameters copied from pretrained models while fine-tuning.
    #[arg(long)]
    pub freeze_copied: Option<bool>,
    /// Train fused variants from scratch instead of pretraining.
    #[arg(long)]
    pub random_init: Option<bool>,
    /// Frame step within the central window.
    #[arg(long)]
    pub dilation: Option<usize>,
    /// Fold count for the grouped k-fold protocol.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Evaluation protocol: kfold | cross-subject | cross-view | cross-setup.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Subject ids forming the training side of cross-subject.
    #[arg(long, value_delimiter = ',')]
    pub train_subjects: Option<Vec<u32>>,
    /// Camera ids forming the training side of cross-view.
    #[arg(long, value_delimiter = ',')]
    pub train_cameras: Option<Vec<u32>>,
    /// Setup ids forming the training side of cross-setup.
    #[arg(long, value_delimiter = ',')]
    pub train_setups: Option<Vec<u32>>,
}

/// Which split-construction rule a run uses (the explicit-file variant is
/// selected with `--split-file` instead).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKey {
    KFold,
    CrossSubject,
    CrossView,
    CrossSetup,
}

impl ProtocolKey {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "kfold" => Ok(ProtocolKey::KFold),
            "cross-subject" => Ok(ProtocolKey::CrossSubject),
            "cross-view" => Ok(ProtocolKey::CrossView),
            "cross-setup" => Ok(ProtocolKey::CrossSetup),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?}; expected kfold, cross-subject, \
                 cross-view or cross-setup"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ProtocolKey::KFold => "kfold",
            ProtocolKey::CrossSubject => "cross-subject",
            ProtocolKey::CrossView => "cross-view",
            ProtocolKey::CrossSetup => "cross-setup",
        }
    }
}

/// Fully resolved run settings: every knob materialized.
#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub dilation: usize,
    pub folds: usize,
    pub protocol: ProtocolKey,
    pub train_subjects: Vec<u32>,
    pub train_cameras: Vec<u32>,
    pub train_setups: Vec<u32>,
}

impl Settings {
    /// Applies precedence (defaults, then file, then flags) and validates.
    /// `manifest_classes` supplies the class count when neither the file
    /// nor a flag sets one.
    pub fn resolve(
        file: Option<&FileSettings>,
        flags: &SettingsFlags,
        manifest_classes: usize,
    ) -> Result<Settings> {
        let blank = FileSettings::default();
        let file = file.unwrap_or(&blank);
        fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
            flag.clone().or_else(|| file.clone()).unwrap_or(default)
        }

        let variant_name = pick(&flags.variant, &file.variant, "inter".to_string());
        let variant: Variant = variant_name.parse()?;
        let classes = pick(&flags.classes, &file.classes, manifest_classes);
        let frames = pick(&flags.frames, &file.frames, 8);
        let dims = pick(&flags.dims, &file.dims, 3);
        let joints = pick(&flags.joints, &file.joints, 15);

        let mut model = ModelConfig::new(variant, classes, frames, dims, joints);
        model.use_h = pick(&flags.use_h, &file.use_h, model.use_h);
        model.one_hot_ids = pick(&flags.one_hot_ids, &file.one_hot_ids, model.one_hot_ids);
        model.fuse_at = pick(&flags.fuse_at, &file.fuse_at, model.fuse_at);
        model.lstm = pick(&flags.lstm, &file.lstm, model.lstm);
        model.g_widths = pick(&flags.g_widths, &file.g_widths, model.g_widths.clone());
        model.f_widths = pick(&flags.f_widths, &file.f_widths, model.f_widths.clone());
        model.lstm_hidden = pick(&flags.lstm_hidden, &file.lstm_hidden, model.lstm_hidden);
        model.dropout = pick(&flags.dropout, &file.dropout, model.dropout);

        let mut train = TrainConfig::new(model);
        train.lr = pick(&flags.lr, &file.lr, train.lr);
        train.init_std = pick(&flags.init_std, &file.init_std, train.init_std);
        train.batch_size = pick(&flags.batch_size, &file.batch_size, train.batch_size);
        train.epochs = pick(&flags.epochs, &file.epochs, train.epochs);
        train.seed = pick(&flags.seed, &file.seed, train.seed);
        train.swap_augment = pick(&flags.swap_augment, &file.swap_augment, train.swap_augment);
        train.val_fraction = pick(&flags.val_fraction, &file.val_fraction, train.val_fraction);
        train.freeze_copied = pick(&flags.freeze_copied, &file.freeze_copied, false);
        train.random_init_fusion = pick(&flags.random_init, &file.random_init, false);

        let protocol_name = pick(&flags.protocol, &file.protocol, "kfold".to_string());
        let settings = Settings {
            train,
            dilation: pick(&flags.dilation, &file.dilation, 1),
            folds: pick(&flags.folds, &file.folds, 5),
            protocol: ProtocolKey::parse(&protocol_name)?,
            train_subjects: pick(&flags.train_subjects, &file.train_subjects, Vec::new()),
            train_cameras: pick(&flags.train_cameras, &file.train_cameras, Vec::new()),
            train_setups: pick(&flags.train_setups, &file.train_setups, Vec::new()),
        };
        settings.train.validate()?;
        if settings.dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        if settings.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        Ok(settings)
    }

    /// Loads `--config` (if given) and resolves it against the flags.
    pub fn from_flags(flags: &SettingsFlags, manifest_classes: usize) -> Result<Settings> {
        let file = match &flags.config {
            Some(path) => Some(FileSettings::load(path)?),
            None => None,
        };
        Settings::resolve(file.as_ref(), flags, manifest_classes)
    }

    /// The split-construction rule these settings describe.
    pub fn fold_protocol(&self) -> Result<Protocol> {
        match self.protocol {
            ProtocolKey::KFold => Ok(Protocol::KFold { k: self.folds }),
            ProtocolKey::CrossSubject => {
                if self.train_subjects.is_empty() {
                    return Err(Error::Config(
                        "cross-subject protocol needs train_subjects".into(),
                    ));
                }
                Ok(Protocol::CrossSubject {
                    train_subjects: self.train_subjects.clone(),
                })
            }
            ProtocolKey::CrossView => {
                if self.train_cameras.is_empty() {
                    return Err(Error::Config(
                        "cross-view protocol needs train_cameras".into(),
                    ));
                }
                Ok(Protocol::CrossView {
                    train_cameras: self.train_cameras.clone(),
                })
            }
            ProtocolKey::CrossSetup => {
                if self.train_setups.is_empty() {
                    return Err(Error::Config(
                        "cross-setup protocol needs train_setups".into(),
                    ));
                }
                Ok(Protocol::CrossSetup {
                    train_setups: self.train_setups.clone(),
                })
            }
        }
    }

    /// The resolved configuration as a flat TOML document with every key
    /// materialized, in a fixed order. Written next to run outputs so a
    /// run can be reproduced from its artifacts alone.
    pub fn to_toml(&self) -> String {
        let m = &self.train.model;
        let ints = |xs: &[usize]| -> String {
            let inner: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
            format!("[{}]", inner.join(", "))
        };
        let ids = |xs: &[u32]| -> String {
            let inner: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
            format!("[{}]", inner.join(", "))
        };
        let float = |v: f64| -> String {
            // Keep floats recognizably floats in TOML.
            if v.fract() == 0.0 && v.abs() < 1e15 {
                format!("{v:.1}")
            } else {
                v.to_string()
            }
        };
        format!(
            "version = {CONFIG_VERSION}\n\
             variant = \"{}\"\n\
             classes = {}\n\
             frames = {}\n\
             dims = {}\n\
             joints = {}\n\
             use_h = {}\n\
             one_hot_ids = {}\n\
             fuse_at = {}\n\
             lstm = {}\n\
             g_widths = {}\n\
             f_widths = {}\n\
             lstm_hidden = {}\n\
             dropout = {}\n\
             lr = {}\n\
             init_std = {}\n\
             batch_size = {}\n\
             epochs = {}\n\
             seed = {}\n\
             swap_augment = {}\n\
             val_fraction = {}\n\
             freeze_copied = {}\n\
             random_init = {}\n\
             dilation = {}\n\
             folds = {}\n\
             protocol = \"{}\"\n\
             train_subjects = {}\n\
             train_cameras = {}\n\
             train_setups = {}\n",
            m.variant.name(),
            m.classes,
            m.t,
            m.d,
            m.n_joints,
            m.use_h,
            m.one_hot_ids,
            m.fuse_at,
            m.lstm,
            ints(&m.g_widths),
            ints(&m.f_widths),
            m.lstm_hidden,
            float(m.dropout),
            float(self.train.lr),
            float(self.train.init_std),
            self.train.batch_size,
            self.train.epochs,
            self.train.seed,
            self.train.swap_augment,
            float(self.train.val_fraction),
            self.train.freeze_copied,
            self.train.random_init_fusion,
            self.dilation,
            self.folds,
            self.protocol.name(),
            ids(&self.train_subjects),
            ids(&self.train_cameras),
            ids(&self.train_setups),
        )
    }

    /// Digest of the resolved configuration; a run's identity.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
