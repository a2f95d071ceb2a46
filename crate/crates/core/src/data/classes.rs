use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six joint age/gender classes, in their fixed (alphabetical) index
/// order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicClass {
    FemaleAdult,
    FemaleChild,
    FemaleTeenager,
    MaleAdult,
    MaleChild,
    MaleTeenager,
}

impl DemographicClass {
    pub const ALL: [DemographicClass; 6] = [
        DemographicClass::FemaleAdult,
        DemographicClass::FemaleChild,
        DemographicClass::FemaleTeenager,
        DemographicClass::MaleAdult,
        DemographicClass::MaleChild,
        DemographicClass::MaleTeenager,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Label(format!("class index {i} out of range 0..6")))
    }

    /// Display name, e.g. `"Female Adult"`.
    pub fn name(self) -> &'static str {
        match self {
            DemographicClass::FemaleAdult => "Female Adult",
            DemographicClass::FemaleChild => "Female Child",
            DemographicClass::FemaleTeenager => "Female Teenager",
            DemographicClass::MaleAdult => "Male Adult",
            DemographicClass::MaleChild => "Male Child",
            DemographicClass::MaleTeenager => "Male Teenager",
        }
    }

    /// File-system friendly name, e.g. `"female_adult"`.
    pub fn slug(self) -> &'static str {
        match self {
            DemographicClass::FemaleAdult => "female_adult",
            DemographicClass::FemaleChild => "female_child",
            DemographicClass::FemaleTeenager => "female_teenager",
            DemographicClass::MaleAdult => "male_adult",
            DemographicClass::MaleChild => "male_child",
            DemographicClass::MaleTeenager => "male_teenager",
        }
    }

    /// Case-insensitive; spaces, underscores and hyphens are interchangeable.
    pub fn parse(s: &str) -> Option<Self> {
        let norm: Vec<String> = s
            .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let norm = norm.join("_");
        Self::ALL.into_iter().find(|c| c.slug() == norm)
    }
}

impl fmt::Display for DemographicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DemographicClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s).ok_or_else(|| Error::Label(format!("unknown class {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabetical_order() {
        let mut names: Vec<&str> = DemographicClass::ALL.iter().map(|c| c.name()).collect();
        let order = names.clone();
        names.sort();
        assert_eq!(names, order);
        for (i, c) in DemographicClass::ALL.into_iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(DemographicClass::from_index(i).unwrap(), c);
        }
        assert!(DemographicClass::from_index(6).is_err());
    }

    #[test]
    fn parsing_is_lenient() {
        assert_eq!(
            DemographicClass::parse("female teenager"),
            Some(DemographicClass::FemaleTeenager)
        );
        assert_eq!(DemographicClass::parse("MALE_CHILD"), Some(DemographicClass::MaleChild));
        assert_eq!(
            DemographicClass::parse(" Male-Adult "),
            Some(DemographicClass::MaleAdult)
        );
        assert_eq!(DemographicClass::parse("pedestrian"), None);
        for c in DemographicClass::ALL {
            assert_eq!(c.name().parse::<DemographicClass>().unwrap(), c);
            assert_eq!(c.slug().parse::<DemographicClass>().unwrap(), c);
        }
    }
}
