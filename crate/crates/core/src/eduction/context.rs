use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EductionError;

/// Evaluation coordinate: dimension name to integer tag. Unbound dimensions
/// read as tag 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context(BTreeMap<String, i64>);

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, i64)>) -> Self {
        Context(pairs.into_iter().map(|(d, t)| (d.to_owned(), t)).collect())
    }

    pub fn tag(&self, dim: &str) -> i64 {
        self.0.get(dim).copied().unwrap_or(0)
    }

    /// Unchecked update; see [`Context::override_in`] for the checked form.
    pub fn with_tag(mut self, dim: &str, tag: i64) -> Self {
        self.0.insert(dim.to_owned(), tag);
        self
    }

    /// The `@` context update: `self` with `dim` rebound to `tag`. `dim` must
    /// be one of the declared dimensions.
    pub fn override_in(&self, declared: &[String], dim: &str, tag: i64) -> Result<Context, EductionError> {
        if !declared.iter().any(|d| d == dim) {
            return Err(EductionError::UnknownDimension(dim.to_owned()));
        }
        Ok(self.clone().with_tag(dim, tag))
    }

    /// Restricts to `declared` and makes every declared dimension explicit,
    /// so contexts that read identically have identical canonical forms.
    pub fn canonical(&self, declared: &[String]) -> Context {
        Context(declared.iter().map(|d| (d.clone(), self.tag(d))).collect())
    }

    /// True when both contexts read the same tag for every dimension.
    pub fn reads_like(&self, other: &Context) -> bool {
        self.0.keys().chain(other.0.keys()).all(|d| self.tag(d) == other.tag(d))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(d, t)| (d.as_str(), *t))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (d, t)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}:{t}")?;
        }
        f.write_str("}")
    }
}

/// Parses `{t:5, d:1}` (braces optional, `{}` for the empty context).
impl FromStr for Context {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let inner = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')).unwrap_or(s);
        let mut ctx = Context::new();
        for pair in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (d, t) = pair.split_once(':').ok_or_else(|| format!("expected dim:tag, found {pair:?}"))?;
            let d = d.trim();
            if d.is_empty() || !d.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(format!("invalid dimension name {d:?}"));
            }
            let t: i64 = t.trim().parse().map_err(|_| format!("invalid tag in {pair:?}"))?;
            if ctx.0.insert(d.to_owned(), t).is_some() {
                return Err(format!("dimension {d} bound twice"));
            }
        }
        Ok(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn override_adds_binding() {
        let ctx = Context::from_pairs([("t", 3)]);
        let out = ctx.override_in(&dims(&["t", "d"]), "d", 5).unwrap();
        assert_eq!(out, Context::from_pairs([("t", 3), ("d", 5)]));
        assert_eq!(ctx, Context::from_pairs([("t", 3)]), "input unchanged");
    }

    #[test]
    fn override_replaces_binding() {
        let ctx = Context::from_pairs([("t", 3)]);
        assert_eq!(ctx.override_in(&dims(&["t"]), "t", 9).unwrap(), Context::from_pairs([("t", 9)]));
    }

    #[test]
    fn explicit_zero_reads_like_empty() {
        let out = Context::new().override_in(&dims(&["t"]), "t", 0).unwrap();
        assert_eq!(out, Context::from_pairs([("t", 0)]));
        assert!(out.reads_like(&Context::new()));
        assert_eq!(out.canonical(&dims(&["t"])), Context::new().canonical(&dims(&["t"])));
    }

    #[test]
    fn override_of_undeclared_dimension() {
        assert_eq!(
            Context::new().override_in(&dims(&["t"]), "z", 1),
            Err(EductionError::UnknownDimension("z".into()))
        );
    }

    #[test]
    fn parse_and_display() {
        let ctx: Context = "{t:5, d:-1}".parse().unwrap();
        assert_eq!(ctx.to_string(), "{d:-1, t:5}");
        assert_eq!("{}".parse::<Context>().unwrap(), Context::new());
        assert!("{t:x}".parse::<Context>().is_err());
        assert!("{t:1, t:2}".parse::<Context>().is_err());
    }
}
