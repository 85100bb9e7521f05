//! Parameter mapping between a base checkpoint and a donor checkpoint.
//!
//! Every base parameter resolves to exactly one donor parameter or to φ (no
//! counterpart; the base value is kept as is). Resolution is driven by
//! declarative [`MappingRule`]s: the highest-priority matching rule wins, and
//! equal-priority overlaps fall back to declaration order with a warning.
//! Parameters that match no rule map to the same-named donor tensor when one
//! with an identical shape exists, otherwise to φ.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::CheckpointManifest;

/// A base model whose unmapped fraction exceeds this is likely built on a
/// different pre-trained language model.
pub const HIGH_PHI_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Donor name equals base name.
    Direct,
    /// Donor name produced by the template.
    Rename,
    /// Base parameter is an architecture-specific copy of a shared donor weight.
    Duplicate,
    /// Maps to φ.
    Skip,
}

/// `base_pattern` is a glob over parameter names: `*` matches any run of
/// characters (dots included) and `?` a single character. Each wildcard is a
/// capture group that templates reference as `{1}`, `{2}`, ... in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRule {
    pub base_pattern: String,
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default)]
    pub priority: i32,
}

impl MappingRule {
    pub fn new(base_pattern: &str, kind: RuleKind, template: Option<&str>, priority: i32) -> Self {
        Self {
            base_pattern: base_pattern.to_string(),
            kind,
            template: template.map(str::to_string),
            priority,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RuleFile {
    List(Vec<MappingRule>),
    Wrapped { rules: Vec<MappingRule> },
}

pub fn parse_rules(json: &str) -> Result<Vec<MappingRule>> {
    let rules = match serde_json::from_str::<RuleFile>(json)? {
        RuleFile::List(rules) | RuleFile::Wrapped { rules } => rules,
    };
    for rule in &rules {
        CompiledRule::compile(rule)?;
    }
    Ok(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<MappingRule>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rules(&text)
}

struct CompiledRule<'a> {
    rule: &'a MappingRule,
    regex: Regex,
}

impl<'a> CompiledRule<'a> {
    fn compile(rule: &'a MappingRule) -> Result<Self> {
        let invalid = |detail: String| Error::InvalidRule {
            rule: rule.base_pattern.clone(),
            detail,
        };
        if rule.base_pattern.is_empty() {
            return Err(invalid("empty pattern".into()));
        }
        let mut source = String::from("^");
        let mut groups = 0usize;
        for c in rule.base_pattern.chars() {
            match c {
                '*' => {
                    source.push_str("(.*)");
                    groups += 1;
                }
                '?' => {
                    source.push_str("(.)");
                    groups += 1;
                }
                c => source.push_str(&regex::escape(c.encode_utf8(&mut [0; 4]))),
            }
        }
        source.push('$');
        let regex = Regex::new(&source).map_err(|e| invalid(e.to_string()))?;

        match (rule.kind, &rule.template) {
            (RuleKind::Rename | RuleKind::Duplicate, None) => {
                return Err(invalid(format!("{:?} rule needs a template", rule.kind)))
            }
            (RuleKind::Direct | RuleKind::Skip, Some(_)) => {
                return Err(invalid(format!("{:?} rule takes no template", rule.kind)))
            }
            (_, Some(template)) => {
                for index in template_refs(template).map_err(invalid)? {
                    if index == 0 || index > groups {
                        return Err(invalid(format!(
                            "template references {{{index}}} but the pattern has {groups} wildcard(s)"
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(Self { rule, regex })
    }

    fn target(&self, base_name: &str) -> Option<Option<String>> {
        let caps = self.regex.captures(base_name)?;
        Some(match self.rule.kind {
            RuleKind::Skip => None,
            RuleKind::Direct => Some(base_name.to_string()),
            RuleKind::Rename | RuleKind::Duplicate => {
                let template = self.rule.template.as_deref().unwrap_or_default();
                Some(expand_template(template, &caps))
            }
        })
    }
}

fn template_refs(template: &str) -> std::result::Result<Vec<usize>, String> {
    let mut refs = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            return Err(format!("unclosed `{{` in template `{template}`"));
        };
        let inner = &rest[open + 1..open + close];
        let index = inner
            .parse::<usize>()
            .map_err(|_| format!("`{{{inner}}}` is not a capture reference"))?;
        refs.push(index);
        rest = &rest[open + close + 1..];
    }
    Ok(refs)
}

fn expand_template(template: &str, caps: &regex::Captures<'_>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').unwrap_or(rest.len() - open);
        let index: usize = rest[open + 1..close].parse().unwrap_or(0);
        out.push_str(caps.get(index).map_or("", |m| m.as_str()));
        rest = &rest[(close + 1).min(rest.len())..];
    }
    out.push_str(rest);
    out
}

/// How a base parameter was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Direct,
    Rename,
    Duplicate,
    /// φ by an explicit skip rule.
    Skip,
    /// φ because no rule matched and the donor has no same-named, same-shaped tensor.
    Unmatched,
}

impl From<RuleKind> for Resolution {
    fn from(kind: RuleKind) -> Self {
        match kind {
            RuleKind::Direct => Resolution::Direct,
            RuleKind::Rename => Resolution::Rename,
            RuleKind::Duplicate => Resolution::Duplicate,
            RuleKind::Skip => Resolution::Skip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedParam {
    /// `None` is φ.
    pub donor: Option<String>,
    pub resolution: Resolution,
    /// Index into the rule list, `None` for the implicit fallback.
    pub rule: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionStats {
    pub direct: usize,
    pub rename: usize,
    pub duplicate: usize,
    pub skip: usize,
    pub unmatched: usize,
}

impl ResolutionStats {
    fn bump(&mut self, r: Resolution) {
        match r {
            Resolution::Direct => self.direct += 1,
            Resolution::Rename => self.rename += 1,
            Resolution::Duplicate => self.duplicate += 1,
            Resolution::Skip => self.skip += 1,
            Resolution::Unmatched => self.unmatched += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.direct + self.rename + self.duplicate + self.skip + self.unmatched
    }
}

/// The mapping function as an explicit table over every base parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMapping {
    pub pairs: BTreeMap<String, MappedParam>,
    pub stats: ResolutionStats,
    pub warnings: Vec<String>,
}

impl ResolvedMapping {
    /// Donor counterpart of `base_name`; `None` for φ or unknown names.
    pub fn target(&self, base_name: &str) -> Option<&str> {
        self.pairs.get(base_name).and_then(|p| p.donor.as_deref())
    }

    pub fn is_mapped(&self, base_name: &str) -> bool {
        self.target(base_name).is_some()
    }
}

pub fn resolve_mapping(
    base: &CheckpointManifest,
    donor: &CheckpointManifest,
    rules: &[MappingRule],
) -> Result<ResolvedMapping> {
    let compiled = rules
        .iter()
        .map(CompiledRule::compile)
        .collect::<Result<Vec<_>>>()?;

    let mut pairs = BTreeMap::new();
    let mut stats = ResolutionStats::default();
    let mut warnings = Vec::new();

    for info in &base.entries {
        let name = info.name.as_str();
        let mut best: Option<(usize, Option<String>)> = None;
        let mut tied = Vec::new();
        for (i, rule) in compiled.iter().enumerate() {
            let Some(target) = rule.target(name) else {
                continue;
            };
            match &best {
                Some((b, _)) if rules[*b].priority > rule.rule.priority => {}
                Some((b, _)) if rules[*b].priority == rule.rule.priority => tied.push(i),
                _ => {
                    best = Some((i, target));
                    tied.clear();
                }
            }
        }

        let param = match best {
            Some((index, target)) => {
                if !tied.is_empty() {
                    let others: Vec<String> = tied
                        .iter()
                        .map(|&i| format!("`{}`", rules[i].base_pattern))
                        .collect();
                    warnings.push(format!(
                        "`{name}` matches equal-priority rules `{}` and {}; using the first",
                        rules[index].base_pattern,
                        others.join(", ")
                    ));
                }
                if let Some(target) = &target {
                    let Some(donor_info) = donor.get(target) else {
                        return Err(Error::MappingTargetMissing {
                            rule: rules[index].base_pattern.clone(),
                            base: name.to_string(),
                            target: target.clone(),
                        });
                    };
                    if donor_info.shape != info.shape {
                        return Err(Error::ShapeMismatch {
                            name: format!("{name} -> {target}"),
                            left: info.shape.clone(),
                            right: donor_info.shape.clone(),
                        });
                    }
                }
                MappedParam {
                    donor: target,
                    resolution: rules[index].kind.into(),
                    rule: Some(index),
                }
            }
            None => match donor.get(name) {
                Some(d) if d.shape == info.shape => MappedParam {
                    donor: Some(name.to_string()),
                    resolution: Resolution::Direct,
                    rule: None,
                },
                _ => MappedParam {
                    donor: None,
                    resolution: Resolution::Unmatched,
                    rule: None,
                },
            },
        };
        stats.bump(param.resolution);
        pairs.insert(name.to_string(), param);
    }

    let mapping = ResolvedMapping {
        pairs,
        stats,
        warnings,
    };
    let coverage = coverage_report(&mapping, base);
    let mut mapping = mapping;
    if coverage.phi_element_fraction() > HIGH_PHI_FRACTION {
        mapping.warnings.push(format!(
            "{:.1}% of base elements have no donor counterpart; the two models may not share a pre-trained base",
            100.0 * coverage.phi_element_fraction()
        ));
    }
    for w in &mapping.warnings {
        log::warn!("{w}");
    }
    Ok(mapping)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingCoverage {
    pub counts: ResolutionStats,
    pub names: BTreeMap<Resolution, Vec<String>>,
    pub total_elements: u64,
    pub mapped_elements: u64,
    /// Fraction of base scalar elements with a donor counterpart.
    pub mapped_element_fraction: f64,
    pub warnings: Vec<String>,
}

impl MappingCoverage {
    pub fn phi_element_fraction(&self) -> f64 {
        1.0 - self.mapped_element_fraction
    }
}

pub fn coverage_report(mapping: &ResolvedMapping, base: &CheckpointManifest) -> MappingCoverage {
    let mut names: BTreeMap<Resolution, Vec<String>> = BTreeMap::new();
    let mut counts = ResolutionStats::default();
    let mut total = 0u64;
    let mut mapped = 0u64;
    for info in &base.entries {
        let n = info.numel() as u64;
        total += n;
        if let Some(param) = mapping.pairs.get(&info.name) {
            counts.bump(param.resolution);
            names
                .entry(param.resolution)
                .or_default()
                .push(info.name.clone());
            if param.donor.is_some() {
                mapped += n;
            }
        }
    }
    let fraction = if total == 0 {
        1.0
    } else {
        mapped as f64 / total as f64
    };
    MappingCoverage {
        counts,
        names,
        total_elements: total,
        mapped_elements: mapped,
        mapped_element_fraction: fraction,
        warnings: mapping.warnings.clone(),
    }
}

/// Synthetic miniature checkpoints that imitate the naming schemes of two
/// heterogeneous multimodal families, with the rule sets that map them.
pub mod fixtures {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{parse_rules, MappingRule};
    use crate::store::{Dtype, TensorEntry};

    pub const VISUAL_EXPERT_RULES: &str = include_str!("../fixtures/visual_expert_rules.json");
    pub const MULTIWAY_RULES: &str = include_str!("../fixtures/multiway_rules.json");

    pub struct Fixture {
        pub base: Vec<TensorEntry>,
        pub donor: Vec<TensorEntry>,
        pub rules: Vec<MappingRule>,
    }

    struct Builder {
        rng: ChaCha8Rng,
        dtype: Dtype,
        out: Vec<TensorEntry>,
    }

    impl Builder {
        fn new(seed: u64, dtype: Dtype) -> Self {
            Self {
                rng: ChaCha8Rng::seed_from_u64(seed),
                dtype,
                out: Vec::new(),
            }
        }

        fn add(&mut self, name: String, shape: &[usize]) {
            let n: usize = shape.iter().product();
            let values: Vec<f32> = (0..n).map(|_| self.rng.random_range(-1.0..1.0)).collect();
            self.out
                .push(TensorEntry::from_f32(name, self.dtype, shape.to_vec(), &values).unwrap());
        }
    }

    fn llama_language_model(b: &mut Builder, layers: usize, h: usize, fused_qkv: bool) {
        let vocab = 16;
        b.add("model.embed_tokens.weight".into(), &[vocab, h]);
        b.add("model.norm.weight".into(), &[h]);
        b.add("lm_head.weight".into(), &[vocab, h]);
        for i in 0..layers {
            let p = format!("model.layers.{i}");
            b.add(format!("{p}.input_layernorm.weight"), &[h]);
            b.add(format!("{p}.post_attention_layernorm.weight"), &[h]);
            if fused_qkv {
                b.add(format!("{p}.self_attn.query_key_value.weight"), &[3 * h, h]);
                b.add(format!("{p}.self_attn.dense.weight"), &[h, h]);
            } else {
                for proj in ["q_proj", "k_proj", "v_proj", "o_proj"] {
                    b.add(format!("{p}.self_attn.{proj}.weight"), &[h, h]);
                }
            }
            b.add(format!("{p}.mlp.gate_proj.weight"), &[2 * h, h]);
            b.add(format!("{p}.mlp.up_proj.weight"), &[2 * h, h]);
            b.add(format!("{p}.mlp.down_proj.weight"), &[h, 2 * h]);
        }
    }

    /// Base with per-layer visual-expert copies of the attention QKV, the
    /// attention output and the FFN; donor is a plain fused-QKV language
    /// model with its own differently-shaped vision tower.
    pub fn visual_expert(layers: usize, hidden: usize, seed: u64) -> Fixture {
        let h = hidden;
        let mut base = Builder::new(seed, Dtype::F32);
        base.add("model.embed_tokens.weight".into(), &[16, h]);
        base.add("model.norm.weight".into(), &[h]);
        base.add("lm_head.weight".into(), &[16, h]);
        base.add("model.vision.patch_embedding.weight".into(), &[h, 12]);
        base.add("model.vision.transformer.layers.0.mlp.fc1.weight".into(), &[2 * h, h]);
        for i in 0..layers {
            let p = format!("model.layers.{i}");
            base.add(format!("{p}.input_layernorm.weight"), &[h]);
            base.add(format!("{p}.post_attention_layernorm.weight"), &[h]);
            for expert in ["language_expert", "vision_expert"] {
                base.add(format!("{p}.self_attn.{expert}_query_key_value.weight"), &[3 * h, h]);
                base.add(format!("{p}.self_attn.{expert}_dense.weight"), &[h, h]);
            }
            for mlp in ["language_mlp", "vision_mlp"] {
                base.add(format!("{p}.mlp.{mlp}.gate_proj.weight"), &[2 * h, h]);
                base.add(format!("{p}.mlp.{mlp}.up_proj.weight"), &[2 * h, h]);
                base.add(format!("{p}.mlp.{mlp}.down_proj.weight"), &[h, 2 * h]);
            }
        }

        let mut donor = Builder::new(seed ^ 0x9e37_79b9, Dtype::F32);
        llama_language_model(&mut donor, layers, h, true);
        donor.add("model.vision.patch_embedding.weight".into(), &[h, 20]);
        donor.add("model.mm_projector.weight".into(), &[h, h]);

        Fixture {
            base: base.out,
            donor: donor.out,
            rules: parse_rules(VISUAL_EXPERT_RULES).unwrap(),
        }
    }

    /// Base with modality-adaptive (multiway) key/value projections and layer
    /// norms; donor is a plain split-projection language model.
    pub fn multiway(layers: usize, hidden: usize, seed: u64) -> Fixture {
        let h = hidden;
        let mut base = Builder::new(seed, Dtype::BF16);
        base.add("model.embed_tokens.weight".into(), &[16, h]);
        base.add("model.norm.weight".into(), &[h]);
        base.add("lm_head.weight".into(), &[16, h]);
        base.add("model.vision_model.embeddings.patch_embed.weight".into(), &[h, 12]);
        base.add("model.visual_abstractor.query_embeds".into(), &[4, h]);
        for i in 0..layers {
            let p = format!("model.layers.{i}");
            for way in 0..2 {
                base.add(format!("{p}.input_layernorm.multiway.{way}.weight"), &[h]);
                base.add(format!("{p}.post_attention_layernorm.multiway.{way}.weight"), &[h]);
                base.add(format!("{p}.self_attn.k_proj.multiway.{way}.weight"), &[h, h]);
                base.add(format!("{p}.self_attn.v_proj.multiway.{way}.weight"), &[h, h]);
            }
            base.add(format!("{p}.self_attn.q_proj.weight"), &[h, h]);
            base.add(format!("{p}.self_attn.o_proj.weight"), &[h, h]);
            base.add(format!("{p}.mlp.gate_proj.weight"), &[2 * h, h]);
            base.add(format!("{p}.mlp.up_proj.weight"), &[2 * h, h]);
            base.add(format!("{p}.mlp.down_proj.weight"), &[h, 2 * h]);
        }

        let mut donor = Builder::new(seed ^ 0x85eb_ca6b, Dtype::BF16);
        llama_language_model(&mut donor, layers, h, false);
        donor.add("model.vision_tower.patch_embed.weight".into(), &[h, 20]);

        Fixture {
            base: base.out,
            donor: donor.out,
            rules: parse_rules(MULTIWAY_RULES).unwrap(),
        }
    }
}
