//! Experiment configuration: defaults, the sectioned key-value file
//! format, command-line overrides, and validation.

use crate::data::DomainConfig;
use crate::error::{Error, Result};
use crate::federation::{Strategy, TransportMode};
use crate::model::{ModelConfig, OptimConfig};
use crate::numerics::LrSchedule;
use crate::sampler::SamplerConfig;
use std::collections::BTreeMap;

/// Everything one experiment needs. Domain seeds are derived per
/// repetition from `seed`; the seeds inside the domain sections are
/// placeholders that get overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub k: usize,
    pub rounds: usize,
    pub strategy: Strategy,
    pub transport: TransportMode,
    pub sampling_enabled: bool,
    pub upstream: bool,
    pub classes_per_client: usize,

    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub source_n_per_class: usize,
    pub target_n_per_class: usize,
    pub test_fraction: f64,

    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub init_std: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,

    pub server_lr: f64,
    pub server_momentum: f64,
    pub server_weight_decay: f64,
    pub server_batch_size: usize,
    pub server_epochs: usize,
    pub server_milestones: Option<Vec<usize>>,
    pub label_smoothing: f64,
    pub patience: Option<usize>,

    pub client_lr: f64,
    pub client_momentum: f64,
    pub client_weight_decay: f64,
    pub client_batch_size: usize,
    pub client_epochs: usize,
    pub client_milestones: Option<Vec<usize>>,

    pub sampler: SamplerConfig,

    pub source_domain: DomainConfig,
    pub client_domains: Vec<DomainConfig>,
}

impl Default for ExperimentConfig {
    /// The default synthetic two-domain task: clean source, one client
    /// behind a strong photometric + rotation shift.
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            repetitions: 5,
            k: 5,
            rounds: 1,
            strategy: Strategy::OnDemand,
            transport: TransportMode::InProcess,
            sampling_enabled: false,
            upstream: true,
            classes_per_client: 10,

            height: 16,
            width: 16,
            class_count: 10,
            source_n_per_class: 60,
            target_n_per_class: 80,
            test_fraction: 0.25,

            hidden: vec![48],
            embedding_dim: 24,
            init_std: 0.01,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,

            server_lr: 0.01,
            server_momentum: 0.9,
            server_weight_decay: 0.001,
            server_batch_size: 128,
            server_epochs: 80,
            server_milestones: None,
            label_smoothing: 0.1,
            patience: None,

            client_lr: 0.1,
            client_momentum: 0.9,
            client_weight_decay: 0.001,
            client_batch_size: 32,
            client_epochs: 100,
            client_milestones: None,

            sampler: SamplerConfig::default(),

            source_domain: DomainConfig {
                brightness_shift: 0.0,
                contrast_scale: 1.0,
                noise_std: 0.02,
                rotation_deg: 0.0,
                seed: 0,
            },
            client_domains: vec![DomainConfig {
                brightness_shift: -0.15,
                contrast_scale: 0.55,
                noise_std: 0.14,
                rotation_deg: 40.0,
                seed: 0,
            }],
        }
    }
}

impl ExperimentConfig {
    pub fn feature_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.feature_dim(),
            hidden: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
            class_count: self.class_count,
            init_std: self.init_std,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
        }
    }

    pub fn server_optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.server_lr,
            momentum: self.server_momentum,
            weight_decay: self.server_weight_decay,
        }
    }

    pub fn client_optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.client_lr,
            momentum: self.client_momentum,
            weight_decay: self.client_weight_decay,
        }
    }

    pub fn server_schedule(&self) -> LrSchedule {
        match &self.server_milestones {
            Some(m) => LrSchedule {
                milestones: m.clone(),
                factor: 0.1,
            },
            None => LrSchedule::default_for(self.server_epochs),
        }
    }

    pub fn client_schedule(&self) -> LrSchedule {
        match &self.client_milestones {
            Some(m) => LrSchedule {
                milestones: m.clone(),
                factor: 0.1,
            },
            None => LrSchedule::default_for(self.client_epochs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.repetitions == 0 {
            bad.push("experiment.repetitions must be >= 1".to_string());
        }
        if self.rounds == 0 {
            bad.push("experiment.rounds must be >= 1".to_string());
        }
        if self.class_count == 0 {
            bad.push("data.class_count must be >= 1".to_string());
        }
        if self.classes_per_client == 0 || self.classes_per_client > self.class_count {
            bad.push(format!(
                "experiment.classes_per_client must be in 1..={}",
                self.class_count
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction <= 0.0 {
            bad.push("data.test_fraction must be in (0, 1)".to_string());
        }
        if self.height == 0 || self.width == 0 {
            bad.push("data.height and data.width must be >= 1".to_string());
        }
        if self.embedding_dim == 0 {
            bad.push("model.embedding_dim must be >= 1".to_string());
        }
        if self.server_epochs > 300 {
            bad.push("server.epochs must be <= 300".to_string());
        }
        if self.client_epochs > 200 {
            bad.push("client.epochs must be <= 200".to_string());
        }
        if self.client_domains.is_empty() {
            bad.push("at least one [client.N] domain section is required".to_string());
        }
        if self.k > self.target_n_per_class {
            bad.push(format!(
                "experiment.k = {} exceeds data.target_n_per_class = {}",
                self.k, self.target_n_per_class
            ));
        }
        if let Err(e) = self.sampler.validate() {
            bad.push(format!("sampler: {e}"));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

/// Parse the sectioned key-value format: `[section]` headers, `key = value`
/// lines, `#` comments.
pub fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current = String::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                line_no + 1
            )));
        };
        if current.is_empty() {
            return Err(Error::Config(format!(
                "line {}: key outside any [section]",
                line_no + 1
            )));
        }
        sections
            .get_mut(&current)
            .unwrap()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(sections)
}

struct SectionReader<'a> {
    sections: &'a Sections,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl<'a> SectionReader<'a> {
    fn get(&self, section: &str, key: &str) -> Option<&'a str> {
        let v = self
            .sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str());
        if v.is_some() {
            self.consumed.borrow_mut().push(format!("{section}.{key}"));
        }
        v
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str, into: &mut T, bad: &mut Vec<String>) {
        if let Some(v) = self.get(section, key) {
            match v.parse::<T>() {
                Ok(parsed) => *into = parsed,
                Err(_) => bad.push(format!("{section}.{key} = '{v}'")),
            }
        }
    }

    fn unconsumed(&self) -> Vec<String> {
        let consumed = self.consumed.borrow();
        let mut extra = Vec::new();
        for (section, keys) in self.sections {
            for key in keys.keys() {
                let full = format!("{section}.{key}");
                if !consumed.contains(&full) {
                    extra.push(full);
                }
            }
        }
        extra
    }
}

fn parse_usize_list(v: &str) -> std::result::Result<Vec<usize>, ()> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| ()))
        .collect()
}

fn read_domain(r: &SectionReader, section: &str, into: &mut DomainConfig, bad: &mut Vec<String>) {
    r.parse(section, "brightness_shift", &mut into.brightness_shift, bad);
    r.parse(section, "contrast_scale", &mut into.contrast_scale, bad);
    r.parse(section, "noise_std", &mut into.noise_std, bad);
    r.parse(section, "rotation_deg", &mut into.rotation_deg, bad);
    r.parse(section, "seed", &mut into.seed, bad);
}

/// Build a config from file text, starting from the defaults. Unknown or
/// unparsable keys are all reported at once.
pub fn config_from_text(text: &str) -> Result<ExperimentConfig> {
    let sections = parse_sections(text)?;
    config_from_sections(&sections)
}

fn config_from_sections(sections: &Sections) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let r = SectionReader {
        sections,
        consumed: std::cell::RefCell::new(Vec::new()),
    };
    let mut bad: Vec<String> = Vec::new();

    r.parse("experiment", "seed", &mut cfg.seed, &mut bad);
    r.parse("experiment", "repetitions", &mut cfg.repetitions, &mut bad);
    r.parse("experiment", "k", &mut cfg.k, &mut bad);
    r.parse("experiment", "rounds", &mut cfg.rounds, &mut bad);
    if let Some(v) = r.get("experiment", "strategy") {
        match Strategy::parse(v) {
            Ok(s) => cfg.strategy = s,
            Err(_) => bad.push(format!("experiment.strategy = '{v}'")),
        }
    }
    if let Some(v) = r.get("experiment", "transport") {
        match TransportMode::parse(v) {
            Ok(t) => cfg.transport = t,
            Err(_) => bad.push(format!("experiment.transport = '{v}'")),
        }
    }
    r.parse("experiment", "sampling_enabled", &mut cfg.sampling_enabled, &mut bad);
    r.parse("experiment", "upstream", &mut cfg.upstream, &mut bad);
    r.parse("experiment", "classes_per_client", &mut cfg.classes_per_client, &mut bad);

    r.parse("data", "height", &mut cfg.height, &mut bad);
    r.parse("data", "width", &mut cfg.width, &mut bad);
    r.parse("data", "class_count", &mut cfg.class_count, &mut bad);
    r.parse("data", "source_n_per_class", &mut cfg.source_n_per_class, &mut bad);
    r.parse("data", "target_n_per_class", &mut cfg.target_n_per_class, &mut bad);
    r.parse("data", "test_fraction", &mut cfg.test_fraction, &mut bad);

    if let Some(v) = r.get("model", "hidden") {
        match parse_usize_list(v) {
            Ok(h) => cfg.hidden = h,
            Err(()) => bad.push(format!("model.hidden = '{v}'")),
        }
    }
    r.parse("model", "embedding_dim", &mut cfg.embedding_dim, &mut bad);
    r.parse("model", "init_std", &mut cfg.init_std, &mut bad);
    r.parse("model", "bn_momentum", &mut cfg.bn_momentum, &mut bad);
    r.parse("model", "bn_epsilon", &mut cfg.bn_epsilon, &mut bad);

    r.parse("server", "lr", &mut cfg.server_lr, &mut bad);
    r.parse("server", "momentum", &mut cfg.server_momentum, &mut bad);
    r.parse("server", "weight_decay", &mut cfg.server_weight_decay, &mut bad);
    r.parse("server", "batch_size", &mut cfg.server_batch_size, &mut bad);
    r.parse("server", "epochs", &mut cfg.server_epochs, &mut bad);
    r.parse("server", "label_smoothing", &mut cfg.label_smoothing, &mut bad);
    if let Some(v) = r.get("server", "milestones") {
        match parse_usize_list(v) {
            Ok(m) => cfg.server_milestones = Some(m),
            Err(()) => bad.push(format!("server.milestones = '{v}'")),
        }
    }
    if let Some(v) = r.get("server", "patience") {
        match v.parse::<usize>() {
            Ok(p) => cfg.patience = Some(p),
            Err(_) => bad.push(format!("server.patience = '{v}'")),
        }
    }

    r.parse("client", "lr", &mut cfg.client_lr, &mut bad);
    r.parse("client", "momentum", &mut cfg.client_momentum, &mut bad);
    r.parse("client", "weight_decay", &mut cfg.client_weight_decay, &mut bad);
    r.parse("client", "batch_size", &mut cfg.client_batch_size, &mut bad);
    r.parse("client", "epochs", &mut cfg.client_epochs, &mut bad);
    if let Some(v) = r.get("client", "milestones") {
        match parse_usize_list(v) {
            Ok(m) => cfg.client_milestones = Some(m),
            Err(()) => bad.push(format!("client.milestones = '{v}'")),
        }
    }

    r.parse("sampler", "budget", &mut cfg.sampler.budget, &mut bad);
    r.parse("sampler", "q_min", &mut cfg.sampler.q_min, &mut bad);
    r.parse("sampler", "q_max", &mut cfg.sampler.q_max, &mut bad);
    r.parse("sampler", "rate_floor", &mut cfg.sampler.rate_floor, &mut bad);
    r.parse("sampler", "ridge_lambda", &mut cfg.sampler.ridge_lambda, &mut bad);

    read_domain(&r, "source", &mut cfg.source_domain, &mut bad);

    // Per-client domain sections, contiguous from [client.0].
    let mut client_domains = Vec::new();
    for i in 0.. {
        let section = format!("client.{i}");
        if !sections.contains_key(&section) {
            break;
        }
        let mut domain = cfg
            .client_domains
            .first()
            .cloned()
            .unwrap_or_else(|| DomainConfig::identity(0));
        read_domain(&r, &section, &mut domain, &mut bad);
        client_domains.push(domain);
    }
    if !client_domains.is_empty() {
        cfg.client_domains = client_domains;
    }

    let extra = r.unconsumed();
    if !extra.is_empty() {
        bad.push(format!("unknown keys: {}", extra.join(", ")));
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad.join("; ")));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Apply `section.key=value` overrides on top of a parsed config.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut sections = parse_sections(text)?;
    for ov in overrides {
        let Some((path, value)) = ov.split_once('=') else {
            return Err(Error::Config(format!(
                "override '{ov}' must look like section.key=value"
            )));
        };
        let Some((section, key)) = path.trim().rsplit_once('.') else {
            return Err(Error::Config(format!(
                "override '{ov}' must look like section.key=value"
            )));
        };
        sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.trim().to_string());
    }
    config_from_sections(&sections)
}

/// Render a config back to the file format (used to write templates).
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("[experiment]\n");
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s.push_str(&format!("repetitions = {}\n", cfg.repetitions));
    s.push_str(&format!("k = {}\n", cfg.k));
    s.push_str(&format!("rounds = {}\n", cfg.rounds));
    s.push_str(&format!("strategy = {}\n", cfg.strategy.name()));
    s.push_str(&format!("transport = {}\n", cfg.transport.name()));
    s.push_str(&format!("sampling_enabled = {}\n", cfg.sampling_enabled));
    s.push_str(&format!("upstream = {}\n", cfg.upstream));
    s.push_str(&format!("classes_per_client = {}\n\n", cfg.classes_per_client));

    s.push_str("[data]\n");
    s.push_str(&format!("height = {}\n", cfg.height));
    s.push_str(&format!("width = {}\n", cfg.width));
    s.push_str(&format!("class_count = {}\n", cfg.class_count));
    s.push_str(&format!("source_n_per_class = {}\n", cfg.source_n_per_class));
    s.push_str(&format!("target_n_per_class = {}\n", cfg.target_n_per_class));
    s.push_str(&format!("test_fraction = {}\n\n", cfg.test_fraction));

    s.push_str("[model]\n");
    s.push_str(&format!(
        "hidden = {}\n",
        cfg.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    ));
    s.push_str(&format!("embedding_dim = {}\n", cfg.embedding_dim));
    s.push_str(&format!("init_std = {}\n", cfg.init_std));
    s.push_str(&format!("bn_momentum = {}\n", cfg.bn_momentum));
    s.push_str(&format!("bn_epsilon = {}\n\n", cfg.bn_epsilon));

    s.push_str("[server]\n");
    s.push_str(&format!("lr = {}\n", cfg.server_lr));
    s.push_str(&format!("momentum = {}\n", cfg.server_momentum));
    s.push_str(&format!("weight_decay = {}\n", cfg.server_weight_decay));
    s.push_str(&format!("batch_size = {}\n", cfg.server_batch_size));
    s.push_str(&format!("epochs = {}\n", cfg.server_epochs));
    s.push_str(&format!("label_smoothing = {}\n", cfg.label_smoothing));
    if let Some(m) = &cfg.server_milestones {
        s.push_str(&format!(
            "milestones = {}\n",
            m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    if let Some(p) = cfg.patience {
        s.push_str(&format!("patience = {p}\n"));
    }
    s.push('\n');

    s.push_str("[client]\n");
    s.push_str(&format!("lr = {}\n", cfg.client_lr));
    s.push_str(&format!("momentum = {}\n", cfg.client_momentum));
    s.push_str(&format!("weight_decay = {}\n", cfg.client_weight_decay));
    s.push_str(&format!("batch_size = {}\n", cfg.client_batch_size));
    s.push_str(&format!("epochs = {}\n", cfg.client_epochs));
    if let Some(m) = &cfg.client_milestones {
        s.push_str(&format!(
            "milestones = {}\n",
            m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    s.push('\n');

    s.push_str("[sampler]\n");
    s.push_str(&format!("budget = {}\n", cfg.sampler.budget));
    s.push_str(&format!("q_min = {}\n", cfg.sampler.q_min));
    s.push_str(&format!("q_max = {}\n", cfg.sampler.q_max));
    s.push_str(&format!("rate_floor = {}\n", cfg.sampler.rate_floor));
    s.push_str(&format!("ridge_lambda = {}\n\n", cfg.sampler.ridge_lambda));

    let domain = |s: &mut String, d: &DomainConfig| {
        s.push_str(&format!("brightness_shift = {}\n", d.brightness_shift));
        s.push_str(&format!("contrast_scale = {}\n", d.contrast_scale));
        s.push_str(&format!("noise_std = {}\n", d.noise_std));
        s.push_str(&format!("rotation_deg = {}\n", d.rotation_deg));
    };
    s.push_str("[source]\n");
    domain(&mut s, &cfg.source_domain);
    for (i, d) in cfg.client_domains.iter().enumerate() {
        s.push_str(&format!("\n[client.{i}]\n"));
        domain(&mut s, d);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn default_optimizer_values_are_pinned() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.server_lr, 0.01);
        assert_eq!(cfg.client_lr, 0.1);
        assert_eq!(cfg.server_momentum, 0.9);
        assert_eq!(cfg.server_weight_decay, 0.001);
        assert_eq!(cfg.server_batch_size, 128);
        assert_eq!(cfg.client_batch_size, 32);
        assert!(cfg.server_epochs <= 300);
        assert!(cfg.client_epochs <= 200);
        assert_eq!(cfg.class_count, 10);
        assert_eq!((cfg.height, cfg.width), (16, 16));
    }

    #[test]
    fn render_parse_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = render_config(&cfg);
        let parsed = config_from_text(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_are_reported() {
        let text = "[experiment]\nseed = 1\nbogus_key = 2\n[nonsense]\nfoo = bar\n";
        let err = config_from_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("experiment.bogus_key"), "{msg}");
        assert!(msg.contains("nonsense.foo"), "{msg}");
    }

    #[test]
    fn bad_values_listed_with_keys() {
        let text = "[experiment]\nk = banana\n[server]\nlr = fast\n";
        let err = config_from_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("experiment.k"), "{msg}");
        assert!(msg.contains("server.lr"), "{msg}");
    }

    #[test]
    fn overrides_take_effect() {
        let cfg = apply_overrides("", &["experiment.k=10".into(), "client.epochs=7".into()])
            .unwrap();
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.client_epochs, 7);
    }

    #[test]
    fn multiple_client_sections() {
        let text = "\n[client.0]\nrotation_deg = 10\n\n[client.1]\nrotation_deg = 20\nnoise_std = 0.1\n";
        let cfg = config_from_text(text).unwrap();
        assert_eq!(cfg.client_domains.len(), 2);
        assert_eq!(cfg.client_domains[0].rotation_deg, 10.0);
        assert_eq!(cfg.client_domains[1].rotation_deg, 20.0);
        assert_eq!(cfg.client_domains[1].noise_std, 0.1);
    }

    #[test]
    fn validation_catches_epoch_bounds() {
        let err = apply_overrides("", &["server.epochs=500".into()]).unwrap_err();
        assert!(err.to_string().contains("server.epochs"));
    }

    #[test]
    fn k_scaling_values_accepted() {
        for k in [0usize, 3, 5, 10] {
            let cfg = apply_overrides("", &[format!("experiment.k={k}")]).unwrap();
            assert_eq!(cfg.k, k);
        }
    }
}
