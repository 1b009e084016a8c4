use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::MorphError;

/// The seven morphological features the toolkit probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    Case,
    Gender,
    Mood,
    Number,
    Person,
    Tense,
    VerbForm,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Case,
        Feature::Gender,
        Feature::Mood,
        Feature::Number,
        Feature::Person,
        Feature::Tense,
        Feature::VerbForm,
    ];

    /// Name as used in the CoNLL-U FEATS column.
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Case => "Case",
            Feature::Gender => "Gender",
            Feature::Mood => "Mood",
            Feature::Number => "Number",
            Feature::Person => "Person",
            Feature::Tense => "Tense",
            Feature::VerbForm => "VerbForm",
        }
    }

    pub fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = MorphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| MorphError::UnknownFeature(s.to_string()))
    }
}

/// Languages with a built-in schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Language {
    English,
    French,
    German,
    Russian,
    Spanish,
}

impl Language {
    pub const ALL: [Language; 5] =
        [Language::English, Language::French, Language::German, Language::Russian, Language::Spanish];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::English => "English",
            Language::French => "French",
            Language::German => "German",
            Language::Russian => "Russian",
            Language::Spanish => "Spanish",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = MorphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| MorphError::UnknownLanguage(s.to_string()))
    }
}

/// Feature inventory of one language: feature → ordered value labels.
///
/// `aliases` maps treebank spellings onto schema labels (UD writes the
/// imperfect tense as `Tense=Imp`, the schema label is `Impr`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub language: String,
    pub features: BTreeMap<Feature, Vec<String>>,
    #[serde(default)]
    pub aliases: BTreeMap<Feature, BTreeMap<String, String>>,
}

fn values(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl FeatureSchema {
    pub fn builtin(language: Language) -> Self {
        use Feature::*;
        let mut features = BTreeMap::new();
        let mut put = |f: Feature, v: &[&str]| {
            features.insert(f, values(v));
        };
        match language {
            Language::English => {
                put(Mood, &["Ind", "Imp"]);
                put(Number, &["Sing", "Plur"]);
                put(Person, &["1", "2", "3"]);
                put(Tense, &["Past", "Pres"]);
                put(VerbForm, &["Fin", "Inf", "Ger", "Part"]);
            }
            Language::French => {
                put(Gender, &["Masc", "Fem"]);
                put(Mood, &["Ind", "Sub", "Cnd", "Imp"]);
                put(Number, &["Sing", "Plur"]);
                put(Person, &["1", "2", "3"]);
                put(Tense, &["Past", "Pres", "Impr", "Fut"]);
                put(VerbForm, &["Fin", "Inf", "Part"]);
            }
            Language::German => {
                put(Case, &["Nom", "Acc", "Dat", "Gen"]);
                put(Gender, &["Masc", "Fem", "Neut"]);
                put(Mood, &["Ind", "Sub", "Imp"]);
                put(Number, &["Sing", "Plur"]);
                put(Person, &["1", "2", "3"]);
                put(Tense, &["Past", "Pres"]);
                put(VerbForm, &["Fin", "Inf", "Part"]);
            }
            Language::Russian => {
                put(Case, &["Nom", "Acc", "Dat", "Gen", "Loc", "Ins"]);
                put(Gender, &["Masc", "Fem", "Neut"]);
                put(Mood, &["Ind", "Cnd", "Imp"]);
                put(Number, &["Sing", "Plur"]);
                put(Person, &["1", "2", "3"]);
                put(Tense, &["Past", "Pres", "Fut"]);
                put(VerbForm, &["Fin", "Inf", "Part", "Conv"]);
            }
            Language::Spanish => {
                put(Gender, &["Masc", "Fem"]);
                put(Mood, &["Ind", "Sub", "Cnd", "Imp"]);
                put(Number, &["Sing", "Plur"]);
                put(Person, &["1", "2", "3"]);
                put(Tense, &["Past", "Pres", "Impr", "Fut"]);
                put(VerbForm, &["Fin", "Inf", "Part", "Ger"]);
            }
        }
        let mut aliases = BTreeMap::new();
        if features.get(&Tense).is_some_and(|v| v.iter().any(|x| x == "Impr")) {
            aliases.insert(Tense, BTreeMap::from([("Imp".to_string(), "Impr".to_string())]));
        }
        FeatureSchema { language: language.as_str().to_string(), features, aliases }
    }

    /// Built-in schema looked up by language name (case-insensitive).
    pub fn builtin_named(name: &str) -> Result<Self, MorphError> {
        Ok(Self::builtin(name.parse()?))
    }

    /// Parses a schema override from JSON:
    /// `{"language": "...", "features": {"Number": ["Sing", "Plur"]}, "aliases": {...}}`.
    pub fn from_json(text: &str) -> Result<Self, MorphError> {
        let schema: FeatureSchema =
            serde_json::from_str(text).map_err(|e| MorphError::SchemaConfig(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), MorphError> {
        for (feature, values) in &self.features {
            if values.is_empty() {
                return Err(MorphError::SchemaConfig(format!("{feature} has no values")));
            }
            let unique: BTreeSet<&String> = values.iter().collect();
            if unique.len() != values.len() {
                return Err(MorphError::SchemaConfig(format!("{feature} has duplicate values")));
            }
        }
        for (feature, map) in &self.aliases {
            for target in map.values() {
                if self.value_index(*feature, target).is_none() {
                    return Err(MorphError::SchemaConfig(format!(
                        "alias target {feature}={target} is not a schema value"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn values(&self, feature: Feature) -> Option<&[String]> {
        self.features.get(&feature).map(Vec::as_slice)
    }

    pub fn feature_list(&self) -> Vec<Feature> {
        self.features.keys().copied().collect()
    }

    pub fn value_index(&self, feature: Feature, value: &str) -> Option<usize> {
        self.features.get(&feature)?.iter().position(|v| v == value)
    }

    /// Maps a raw treebank value to its schema label, if it has one.
    pub fn resolve<'a>(&'a self, feature: Feature, raw: &str) -> Option<&'a str> {
        let values = self.features.get(&feature)?;
        if let Some(v) = values.iter().find(|v| *v == raw) {
            return Some(v);
        }
        let target = self.aliases.get(&feature)?.get(raw)?;
        values.iter().find(|v| *v == target).map(String::as_str)
    }
}

/// Mean number of values per feature, kept exact.
pub fn avg_feature_length(schema: &FeatureSchema) -> Ratio<u64> {
    let count = schema.features.len() as u64;
    if count == 0 {
        return Ratio::from_integer(0);
    }
    let total: u64 = schema.features.values().map(|v| v.len() as u64).sum();
    Ratio::new(total, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    #[test]
    fn feature_lengths_match_reference() {
        let expect = [
            (Language::English, Ratio::new(13, 5)),
            (Language::French, Ratio::new(3, 1)),
            (Language::German, Ratio::new(20, 7)),
            (Language::Russian, Ratio::new(24, 7)),
            (Language::Spanish, Ratio::new(19, 6)),
        ];
        for (lang, want) in expect {
            assert_eq!(avg_feature_length(&FeatureSchema::builtin(lang)), want, "{lang}");
        }
        let russian = avg_feature_length(&FeatureSchema::builtin(Language::Russian));
        assert!((russian.to_f64().unwrap() - 3.43).abs() < 0.005);
    }

    #[test]
    fn single_feature_length() {
        let schema = FeatureSchema::from_json(
            r#"{"language": "Toy", "features": {"Case": ["A", "B", "C", "D", "E"]}}"#,
        )
        .unwrap();
        assert_eq!(avg_feature_length(&schema), Ratio::from_integer(5));
    }

    #[test]
    fn builtin_invariants() {
        for lang in Language::ALL {
            let schema = FeatureSchema::builtin(lang);
            schema.validate().unwrap();
            assert!(schema.features.contains_key(&Feature::Number));
        }
        let en = FeatureSchema::builtin(Language::English);
        assert!(en.values(Feature::Case).is_none());
        assert!(en.values(Feature::Gender).is_none());
        let ru = FeatureSchema::builtin(Language::Russian);
        assert_eq!(ru.values(Feature::Case).unwrap(), ["Nom", "Acc", "Dat", "Gen", "Loc", "Ins"]);
        let de = FeatureSchema::builtin(Language::German);
        assert_eq!(de.values(Feature::Case).unwrap(), ["Nom", "Acc", "Dat", "Gen"]);
    }

    #[test]
    fn aliases_resolve_imperfect() {
        let fr = FeatureSchema::builtin(Language::French);
        assert_eq!(fr.resolve(Feature::Tense, "Imp"), Some("Impr"));
        assert_eq!(fr.resolve(Feature::Tense, "Impr"), Some("Impr"));
        assert_eq!(fr.resolve(Feature::Mood, "Imp"), Some("Imp"));
        assert_eq!(fr.resolve(Feature::Tense, "Pqp"), None);
        let en = FeatureSchema::builtin(Language::English);
        assert_eq!(en.resolve(Feature::Tense, "Imp"), None);
    }

    #[test]
    fn schema_json_rejects_bad_input() {
        assert!(FeatureSchema::from_json(r#"{"language": "X", "features": {"Aspect": ["Perf"]}}"#).is_err());
        assert!(FeatureSchema::from_json(r#"{"language": "X", "features": {"Case": []}}"#).is_err());
        assert!(FeatureSchema::from_json(r#"{"language": "X", "features": {"Case": ["A", "A"]}}"#).is_err());
        assert!(FeatureSchema::from_json(
            r#"{"language": "X", "features": {"Case": ["A"]}, "aliases": {"Case": {"B": "C"}}}"#
        )
        .is_err());
    }

    #[test]
    fn names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(f.as_str().parse::<Feature>().unwrap(), f);
        }
        assert_eq!("german".parse::<Language>().unwrap(), Language::German);
    }
}
