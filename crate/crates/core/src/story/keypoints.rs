use std::collections::BTreeMap;
use std::fmt;

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Comparison key for ledger entries: trimmed, case-folded.
pub fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Case-insensitive set of names. The first spelling seen for a name is the
/// one kept. Serialized as an array ordered by normalized key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct KeySet {
    entries: BTreeMap<String, String>,
}

impl KeySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the name was blank or already present.
    pub fn insert(&mut self, name: &str) -> bool {
        let key = normalize(name);
        if key.is_empty() || self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, name.trim().to_string());
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&normalize(name))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(String::as_str)
    }

    pub fn is_superset(&self, other: &KeySet) -> bool {
        other.entries.keys().all(|k| self.entries.contains_key(k))
    }

    /// Same members regardless of which spelling represents them.
    pub fn same_members(&self, other: &KeySet) -> bool {
        self.entries.keys().eq(other.entries.keys())
    }

    pub fn extend_from(&mut self, other: &KeySet) {
        for name in other.iter() {
            self.insert(name);
        }
    }
}

impl<S: AsRef<str>> FromIterator<S> for KeySet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = KeySet::new();
        for name in iter {
            set.insert(name.as_ref());
        }
        set
    }
}

impl Serialize for KeySet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.len()))?;
        for name in self.iter() {
            seq.serialize_element(name)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for KeySet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct KeySetVisitor;

        impl<'de> Visitor<'de> for KeySetVisitor {
            type Value = KeySet;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an array of names")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<KeySet, A::Error> {
                let mut set = KeySet::new();
                while let Some(name) = seq.next_element::<String>()? {
                    set.insert(&name);
                }
                Ok(set)
            }
        }

        deserializer.deserialize_seq(KeySetVisitor)
    }
}

/// Characters, locations and objects mentioned in a story.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPoints {
    pub who: KeySet,
    pub r#where: KeySet,
    pub objects: KeySet,
}

impl KeyPoints {
    pub fn is_empty(&self) -> bool {
        self.who.is_empty() && self.r#where.is_empty() && self.objects.is_empty()
    }

    pub fn is_superset(&self, other: &KeyPoints) -> bool {
        self.who.is_superset(&other.who)
            && self.r#where.is_superset(&other.r#where)
            && self.objects.is_superset(&other.objects)
    }

    pub fn same_members(&self, other: &KeyPoints) -> bool {
        self.who.same_members(&other.who)
            && self.r#where.same_members(&other.r#where)
            && self.objects.same_members(&other.objects)
    }

    /// `who: A, B; where: X; objects: none`
    pub fn to_compact(&self) -> String {
        fn list(set: &KeySet) -> String {
            if set.is_empty() {
                "none".to_string()
            } else {
                set.iter().collect::<Vec<_>>().join(", ")
            }
        }
        format!(
            "who: {}; where: {}; objects: {}",
            list(&self.who),
            list(&self.r#where),
            list(&self.objects)
        )
    }
}

/// Per-field union. Entries already in `ledger` keep their spelling.
pub fn merge_keypoints(ledger: &KeyPoints, delta: &KeyPoints) -> KeyPoints {
    let mut merged = ledger.clone();
    merged.who.extend_from(&delta.who);
    merged.r#where.extend_from(&delta.r#where);
    merged.objects.extend_from(&delta.objects);
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kp(who: &[&str], r#where: &[&str], objects: &[&str]) -> KeyPoints {
        KeyPoints {
            who: who.iter().collect(),
            r#where: r#where.iter().collect(),
            objects: objects.iter().collect(),
        }
    }

    // Oracle: a plain list scan comparing lowercase+trim, keeping the first
    // spelling. Independent of the BTreeMap representation.
    fn oracle_union(ledger: &[String], delta: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for name in ledger.iter().chain(delta) {
            let t = name.trim();
            if t.is_empty() {
                continue;
            }
            if !out.iter().any(|o| o.to_lowercase() == t.to_lowercase()) {
                out.push(t.to_string());
            }
        }
        out
    }

    #[test]
    fn case_insensitive_dedup_keeps_first_spelling() {
        let merged = merge_keypoints(&kp(&["Anna"], &[], &[]), &kp(&["anna"], &[], &[]));
        assert_eq!(merged.who.iter().collect::<Vec<_>>(), ["Anna"]);
        assert_eq!(merged, kp(&["Anna"], &[], &[]));
    }

    #[test]
    fn identity_cases() {
        let ledger = kp(&["Anna", "Bo"], &["the pier"], &["lamp"]);
        assert_eq!(merge_keypoints(&ledger, &KeyPoints::default()), ledger);
        assert_eq!(merge_keypoints(&KeyPoints::default(), &ledger), ledger);
    }

    #[test]
    fn whitespace_is_trimmed_and_blank_dropped() {
        let set: KeySet = ["  Old Mill ", "old mill", "   "].iter().collect();
        assert_eq!(set.iter().collect::<Vec<_>>(), ["Old Mill"]);
    }

    #[test]
    fn compact_format() {
        let k = kp(&["Bo", "Anna"], &["X"], &[]);
        assert_eq!(k.to_compact(), "who: Anna, Bo; where: X; objects: none");
    }

    #[test]
    fn serializes_as_sorted_arrays() {
        let k = kp(&["zed", "Anna"], &[], &["b", "A"]);
        assert_eq!(
            serde_json::to_string(&k).unwrap(),
            r#"{"who":["Anna","zed"],"where":[],"objects":["A","b"]}"#
        );
    }

    fn names() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[ ]?[a-cA-C]{1,3}[ ]?", 0..6)
    }

    fn keypoints() -> impl Strategy<Value = KeyPoints> {
        (names(), names(), names()).prop_map(|(a, b, c)| KeyPoints {
            who: a.iter().collect(),
            r#where: b.iter().collect(),
            objects: c.iter().collect(),
        })
    }

    proptest! {
        #[test]
        fn matches_list_oracle(ledger in names(), delta in names()) {
            let l = KeyPoints { who: ledger.iter().collect(), ..Default::default() };
            let d = KeyPoints { who: delta.iter().collect(), ..Default::default() };
            let merged = merge_keypoints(&l, &d);
            let mut expected = oracle_union(&ledger, &delta);
            expected.sort_by_key(|n| n.to_lowercase());
            prop_assert_eq!(merged.who.iter().map(str::to_string).collect::<Vec<_>>(), expected);
        }

        #[test]
        fn superset_of_ledger(l in keypoints(), d in keypoints()) {
            let merged = merge_keypoints(&l, &d);
            prop_assert!(merged.is_superset(&l));
            prop_assert!(merged.is_superset(&d));
        }

        #[test]
        fn idempotent(l in keypoints(), d in keypoints()) {
            let once = merge_keypoints(&l, &d);
            prop_assert_eq!(merge_keypoints(&once, &d), once);
        }

        #[test]
        fn commutative_up_to_representative(l in keypoints(), d in keypoints()) {
            prop_assert!(merge_keypoints(&l, &d).same_members(&merge_keypoints(&d, &l)));
        }

        #[test]
        fn associative(a in keypoints(), b in keypoints(), c in keypoints()) {
            let left = merge_keypoints(&merge_keypoints(&a, &b), &c);
            let right = merge_keypoints(&a, &merge_keypoints(&b, &c));
            prop_assert_eq!(left, right);
        }

        #[test]
        fn json_round_trip(k in keypoints()) {
            let json = serde_json::to_string(&k).unwrap();
            prop_assert_eq!(serde_json::from_str::<KeyPoints>(&json).unwrap(), k);
        }
    }
}
