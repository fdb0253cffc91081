//! Matched control/treatment model pairs for the five pretraining contrasts.
//!
//! Fields are compared after normalization (lowercase, alphanumerics only,
//! `inNk` spelled out as `imagenetNk`). A missing optional field matches
//! another missing field; a model missing any of its contrast's required
//! fields is left out.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::{ModelRegistry, RegistryEntry};

#[derive(Debug, thiserror::Error)]
pub enum PairingError {
    #[error("no pairs found for condition {0}")]
    NoPairsFound(Condition),
    #[error("unknown condition '{0}'")]
    UnknownCondition(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    DatasetComplexity,
    Specialization,
    TransferLearning,
    Augmentation,
    ModelScale,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::DatasetComplexity,
        Condition::Specialization,
        Condition::TransferLearning,
        Condition::Augmentation,
        Condition::ModelScale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::DatasetComplexity => "dataset_complexity",
            Condition::Specialization => "specialization",
            Condition::TransferLearning => "transfer_learning",
            Condition::Augmentation => "augmentation",
            Condition::ModelScale => "model_scale",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = PairingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| PairingError::UnknownCondition(s.to_string()))
    }
}

/// A test on one normalized registry field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "is", content = "value")]
pub enum Predicate {
    Missing,
    Present,
    Equals(String),
    OneOf(Vec<String>),
}

impl Predicate {
    fn holds(&self, value: Option<&str>) -> bool {
        match self {
            Predicate::Missing => value.is_none(),
            Predicate::Present => value.is_some(),
            Predicate::Equals(v) => value == Some(normalize(v).as_str()),
            Predicate::OneOf(vs) => value.is_some_and(|x| vs.iter().any(|v| normalize(v) == x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRule {
    pub field: String,
    #[serde(flatten)]
    pub predicate: Predicate,
}

impl FieldRule {
    fn new(field: &str, predicate: Predicate) -> Self {
        FieldRule { field: field.to_string(), predicate }
    }
}

/// Extra constraint on the manipulated field beyond "differs".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaryOrder {
    Unordered,
    /// Control's size label ranks strictly below the treatment's.
    SizeAscending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: Condition,
    /// Held fixed: equal after normalization, missing matching missing.
    pub match_on: Vec<String>,
    /// The manipulated field; control and treatment must differ on it.
    pub vary_on: String,
    /// Fields a model must have to take part at all.
    pub required: Vec<String>,
    pub control_rule: Vec<FieldRule>,
    pub treatment_rule: Vec<FieldRule>,
    pub order: VaryOrder,
}

const IN1K: &str = "imagenet1k";
const IN21K: &str = "imagenet21k";

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl ConditionSpec {
    /// The built-in predicates for each contrast.
    pub fn default_for(name: Condition) -> ConditionSpec {
        use Predicate::*;
        let eq = |v: &str| Equals(v.to_string());
        let (match_on, vary_on, control_rule, treatment_rule, order) = match name {
            Condition::DatasetComplexity => (
                strings(&["architecture", "pretrain_method", "pretrain_aug", "pretrain_ft", "pretrain_resolution"]),
                "pretrain_dataset",
                vec![FieldRule::new("pretrain_dataset", eq(IN1K))],
                vec![FieldRule::new("pretrain_dataset", eq(IN21K))],
                VaryOrder::Unordered,
            ),
            Condition::Specialization => (
                strings(&["architecture", "pretrain_dataset", "pretrain_method", "pretrain_aug", "pretrain_resolution"]),
                "pretrain_ft",
                vec![FieldRule::new("pretrain_dataset", eq(IN21K)), FieldRule::new("pretrain_ft", Missing)],
                vec![FieldRule::new("pretrain_dataset", eq(IN21K)), FieldRule::new("pretrain_ft", eq(IN1K))],
                VaryOrder::Unordered,
            ),
            // the final training target is the fine-tune set for the treatment
            // and the pretraining set for the control; both are IN-1K
            Condition::TransferLearning => (
                strings(&["architecture", "pretrain_method", "pretrain_aug", "pretrain_resolution"]),
                "pretrain_dataset",
                vec![FieldRule::new("pretrain_dataset", eq(IN1K)), FieldRule::new("pretrain_ft", Missing)],
                vec![FieldRule::new("pretrain_dataset", eq(IN21K)), FieldRule::new("pretrain_ft", eq(IN1K))],
                VaryOrder::Unordered,
            ),
            Condition::Augmentation => (
                strings(&["architecture", "pretrain_dataset", "pretrain_ft", "pretrain_resolution"]),
                "pretrain_aug",
                vec![FieldRule::new("pretrain_dataset", eq(IN21K)), FieldRule::new("pretrain_aug", Missing)],
                vec![FieldRule::new("pretrain_dataset", eq(IN21K)), FieldRule::new("pretrain_aug", Present)],
                VaryOrder::Unordered,
            ),
            Condition::ModelScale => (
                strings(&[
                    "family",
                    "model_version",
                    "patch_size",
                    "input_resolution",
                    "pretrain_dataset",
                    "pretrain_method",
                    "pretrain_aug",
                    "pretrain_ft",
                    "pretrain_resolution",
                ]),
                "size",
                vec![],
                vec![],
                VaryOrder::SizeAscending,
            ),
        };
        ConditionSpec {
            name,
            match_on,
            vary_on: vary_on.to_string(),
            // a missing vary_on can be a legitimate control (no fine-tune, no
            // augmentation); only the size contrast needs it on both sides
            required: if order == VaryOrder::SizeAscending { strings(&["family", vary_on]) } else { strings(&["family"]) },
            control_rule,
            treatment_rule,
            order,
        }
    }

    fn admits(&self, e: &Normalized) -> bool {
        self.required.iter().all(|f| e.get(f).is_some())
    }

    /// Ceteris-paribus check: every `match_on` field equal, `vary_on`
    /// different, each side passing its rule, and the order constraint.
    pub fn is_valid_pair(&self, control: &RegistryEntry, treatment: &RegistryEntry) -> bool {
        self.valid(&Normalized::new(control), &Normalized::new(treatment))
    }

    fn valid(&self, c: &Normalized, t: &Normalized) -> bool {
        if c.name == t.name || !self.admits(c) || !self.admits(t) || c.get("family") != t.get("family") {
            return false;
        }
        let rules = |rules: &[FieldRule], e: &Normalized| rules.iter().all(|r| r.predicate.holds(e.get(&r.field)));
        if !rules(&self.control_rule, c) || !rules(&self.treatment_rule, t) {
            return false;
        }
        if self.match_on.iter().any(|f| c.get(f) != t.get(f)) || c.get(&self.vary_on) == t.get(&self.vary_on) {
            return false;
        }
        match self.order {
            VaryOrder::Unordered => true,
            VaryOrder::SizeAscending => match (size_rank(c.get(&self.vary_on)), size_rank(t.get(&self.vary_on))) {
                (Some(a), Some(b)) => a < b,
                _ => false,
            },
        }
    }
}

/// Lowercase alphanumerics with ImageNet shorthands expanded.
pub fn normalize(raw: &str) -> String {
    let s: String = raw.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect();
    match s.strip_prefix("in") {
        Some(rest) if rest.ends_with('k') && rest[..rest.len() - 1].chars().all(|c| c.is_ascii_digit()) && rest.len() > 1 => {
            format!("imagenet{rest}")
        }
        _ => s,
    }
}

/// Size labels from smallest to largest.
pub const SIZE_ORDER: [&str; 13] =
    ["atto", "femto", "pico", "nano", "tiny", "small", "medium", "base", "large", "xlarge", "huge", "giant", "gigantic"];

pub fn size_rank(normalized: Option<&str>) -> Option<usize> {
    SIZE_ORDER.iter().position(|s| Some(*s) == normalized)
}

struct Normalized<'a> {
    name: &'a str,
    fields: BTreeMap<String, Option<String>>,
}

const FIELDS: [&str; 12] = [
    "architecture",
    "family",
    "model_version",
    "size",
    "patch_size",
    "input_resolution",
    "pretrain_dataset",
    "pretrain_method",
    "pretrain_ft",
    "pretrain_aug",
    "pretrain_resolution",
    "macro_family",
];

impl<'a> Normalized<'a> {
    fn new(e: &'a RegistryEntry) -> Self {
        let mut fields: BTreeMap<String, Option<String>> =
            FIELDS.iter().map(|f| (f.to_string(), e.field(f).map(|v| normalize(&v)).filter(|v| !v.is_empty()))).collect();
        for (k, v) in &e.extra {
            fields.entry(k.clone()).or_insert_with(|| Some(normalize(v)).filter(|v| !v.is_empty()));
        }
        Normalized { name: &e.model_name, fields }
    }

    fn get(&self, field: &str) -> Option<&str> {
        self.fields.get(field).and_then(|v| v.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchedPair {
    pub condition: Condition,
    pub control: String,
    pub treatment: String,
    pub family: String,
}

/// Every valid (control, treatment) pair in the registry, sorted by
/// control then treatment name.
pub fn build_pairs(reg: &ModelRegistry, spec: &ConditionSpec) -> Result<Vec<MatchedPair>, PairingError> {
    let entries: Vec<Normalized> = reg.entries().map(Normalized::new).filter(|e| spec.admits(e)).collect();
    let mut by_family: BTreeMap<&str, Vec<&Normalized>> = BTreeMap::new();
    for e in &entries {
        by_family.entry(e.get("family").expect("required")).or_default().push(e);
    }
    let mut pairs = Vec::new();
    for (family, members) in &by_family {
        for c in members {
            for t in members {
                if spec.valid(c, t) {
                    let family = reg.get(c.name).and_then(|e| e.family.clone()).unwrap_or_else(|| family.to_string());
                    pairs.push(MatchedPair { condition: spec.name, control: c.name.to_string(), treatment: t.name.to_string(), family });
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(PairingError::NoPairsFound(spec.name));
    }
    pairs.sort_by(|a, b| (&a.control, &a.treatment).cmp(&(&b.control, &b.treatment)));
    Ok(pairs)
}

/// Audit CSV with header `condition,control,treatment,family`.
pub fn write_pairs_csv<W: Write>(pairs: &[MatchedPair], out: W) -> Result<(), PairingError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["condition", "control", "treatment", "family"])?;
    for p in pairs {
        w.write_record([p.condition.as_str(), &p.control, &p.treatment, &p.family])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vit(name: &str, size: &str, dataset: &str, ft: Option<&str>, aug: Option<&str>) -> RegistryEntry {
        let mut e = RegistryEntry::new(name);
        e.family = Some("ViT".into());
        e.size = Some(size.into());
        e.patch_size = Some("16".into());
        e.input_resolution = Some(224);
        e.pretrain_dataset = Some(dataset.into());
        e.pretrain_ft = ft.map(Into::into);
        e.pretrain_aug = aug.map(Into::into);
        e
    }

    fn table4_registry() -> ModelRegistry {
        ModelRegistry::from_entries([
            vit("vit_base_patch16_224.augreg_in1k", "Base", "ImageNet-1K", None, Some("AugReg")),
            vit("vit_base_patch16_224.augreg_in21k", "Base", "ImageNet-21K", None, Some("AugReg")),
            vit("vit_base_patch16_224.augreg_in21k_ft_in1k", "Base", "ImageNet-21K", Some("ImageNet-1K"), Some("AugReg")),
            vit("vit_base_patch16_224.orig_in21k", "Base", "in21k", None, None),
            vit("vit_small_patch16_224.augreg_in1k", "Small", "ImageNet-1K", None, Some("AugReg")),
        ])
        .unwrap()
    }

    fn names(pairs: &[MatchedPair]) -> Vec<(&str, &str)> {
        pairs.iter().map(|p| (p.control.as_str(), p.treatment.as_str())).collect()
    }

    #[test]
    fn table_examples_are_recovered() {
        let reg = table4_registry();
        let run = |c| build_pairs(&reg, &ConditionSpec::default_for(c)).unwrap();
        assert_eq!(
            names(&run(Condition::DatasetComplexity)),
            vec![("vit_base_patch16_224.augreg_in1k", "vit_base_patch16_224.augreg_in21k")]
        );
        assert_eq!(
            names(&run(Condition::Specialization)),
            vec![("vit_base_patch16_224.augreg_in21k", "vit_base_patch16_224.augreg_in21k_ft_in1k")]
        );
        assert_eq!(
            names(&run(Condition::TransferLearning)),
            vec![("vit_base_patch16_224.augreg_in1k", "vit_base_patch16_224.augreg_in21k_ft_in1k")]
        );
        assert_eq!(
            names(&run(Condition::Augmentation)),
            vec![("vit_base_patch16_224.orig_in21k", "vit_base_patch16_224.augreg_in21k")]
        );
        assert_eq!(
            names(&run(Condition::ModelScale)),
            vec![("vit_small_patch16_224.augreg_in1k", "vit_base_patch16_224.augreg_in1k")]
        );
    }

    #[test]
    fn no_fine_tuned_twin() {
        let reg = ModelRegistry::from_entries([
            vit("a.augreg_in21k", "Base", "ImageNet-21K", None, None),
            vit("b.augreg_in1k", "Base", "ImageNet-1K", None, None),
        ])
        .unwrap();
        assert!(matches!(
            build_pairs(&reg, &ConditionSpec::default_for(Condition::Specialization)),
            Err(PairingError::NoPairsFound(Condition::Specialization))
        ));
    }

    /// Hand-enumerated: of the 15 ordered-by-size candidates only (s1, b1)
    /// and (s2, l2) hold everything but size fixed.
    #[test]
    fn six_model_scale_fixture() {
        let mut other_family = vit("deit_small.in1k", "Small", "ImageNet-1K", None, None);
        other_family.family = Some("DeiT".into());
        let mut other_patch = vit("vit_large_patch32.in1k", "Large", "ImageNet-1K", None, None);
        other_patch.patch_size = Some("32".into());
        let reg = ModelRegistry::from_entries([
            vit("s1", "Small", "ImageNet-1K", None, None),
            vit("b1", "Base", "ImageNet-1K", None, None),
            vit("s2", "Small", "ImageNet-21K", None, None),
            vit("l2", "Large", "ImageNet-21K", None, None),
            other_family,
            other_patch,
        ])
        .unwrap();
        let pairs = build_pairs(&reg, &ConditionSpec::default_for(Condition::ModelScale)).unwrap();
        assert_eq!(names(&pairs), vec![("s1", "b1"), ("s2", "l2")]);
        assert!(pairs.iter().all(|p| p.family == "ViT" && p.condition == Condition::ModelScale));
    }

    #[test]
    fn missing_required_field_excludes_model() {
        let mut no_size = vit("b_unsized", "Base", "ImageNet-1K", None, None);
        no_size.size = None;
        let mut no_family = vit("b_nofam", "Base", "ImageNet-1K", None, None);
        no_family.family = None;
        let reg = ModelRegistry::from_entries([vit("s1", "Small", "ImageNet-1K", None, None), no_size, no_family]).unwrap();
        assert!(matches!(
            build_pairs(&reg, &ConditionSpec::default_for(Condition::ModelScale)),
            Err(PairingError::NoPairsFound(_))
        ));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("ImageNet-1K"), "imagenet1k");
        assert_eq!(normalize("in21k"), "imagenet21k");
        assert_eq!(normalize("IN-22K"), "imagenet22k");
        assert_eq!(normalize("inception"), "inception");
        assert_eq!(normalize("ink"), "ink");
        assert!(size_rank(Some("small")) < size_rank(Some("base")));
    }

    #[test]
    fn specs_round_trip_and_csv() {
        let spec = ConditionSpec::default_for(Condition::Augmentation);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ConditionSpec>(&json).unwrap(), spec);
        let pairs = build_pairs(&table4_registry(), &spec).unwrap();
        let mut buf = Vec::new();
        write_pairs_csv(&pairs, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "condition,control,treatment,family\naugmentation,vit_base_patch16_224.orig_in21k,vit_base_patch16_224.augreg_in21k,ViT\n"
        );
        assert_eq!("model_scale".parse::<Condition>().unwrap(), Condition::ModelScale);
    }

    fn arb_entry() -> impl Strategy<Value = RegistryEntry> {
        (
            0usize..3,
            prop::sample::select(vec!["Tiny", "Small", "Base", "Large"]),
            prop::sample::select(vec!["ImageNet-1K", "ImageNet-21K"]),
            prop::option::of(Just("ImageNet-1K")),
            prop::option::of(Just("AugReg")),
        )
            .prop_map(|(f, size, ds, ft, aug)| {
                let mut e = vit("", size, ds, ft, aug);
                e.family = Some(["ViT", "DeiT", "BEiT"][f].into());
                e
            })
    }

    proptest! {
        #[test]
        fn pairs_are_ceteris_paribus_and_order_free(
            entries in prop::collection::vec(arb_entry(), 2..14),
            rot in 0usize..14,
        ) {
            let named: Vec<RegistryEntry> = entries
                .into_iter()
                .enumerate()
                .map(|(i, mut e)| { e.model_name = format!("m{i:02}"); e.architecture = format!("arch_{}", i % 3); e })
                .collect();
            let mut rotated = named.clone();
            rotated.rotate_left(rot % named.len());
            let reg = ModelRegistry::from_entries(named).unwrap();
            let reg2 = ModelRegistry::from_entries(rotated).unwrap();
            for c in Condition::ALL {
                let spec = ConditionSpec::default_for(c);
                let a = build_pairs(&reg, &spec).ok();
                let b = build_pairs(&reg2, &spec).ok();
                prop_assert_eq!(&a, &b);
                for p in a.unwrap_or_default() {
                    let (ce, te) = (reg.get(&p.control).unwrap(), reg.get(&p.treatment).unwrap());
                    prop_assert!(p.control != p.treatment);
                    for f in &spec.match_on {
                        prop_assert_eq!(ce.field(f).map(|v| normalize(&v)), te.field(f).map(|v| normalize(&v)));
                    }
                    prop_assert_ne!(ce.field(&spec.vary_on).map(|v| normalize(&v)), te.field(&spec.vary_on).map(|v| normalize(&v)));
                    prop_assert_eq!(&ce.family, &te.family);
                }
            }
        }
    }
}
