use std::fmt;
use std::str::FromStr;

use super::{Context, EductionError};
use crate::lang::{Geer, NodeId};

/// A demand written as `target @ {dim:tag, ...}`. The target names an
/// identifier of the program; `_` or an empty target means the program's
/// entry expression. The context part is optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub target: Option<String>,
    pub context: Context,
}

impl Query {
    pub fn entry(context: Context) -> Self {
        Query { target: None, context }
    }

    /// Node to demand in `geer`, with the context checked against its
    /// declared dimensions.
    pub fn resolve(&self, geer: &Geer) -> Result<(NodeId, Context), EductionError> {
        for dim in self.context.dimensions() {
            if !geer.dimensions.iter().any(|d| d == dim) {
                return Err(EductionError::UnknownDimension(dim.to_owned()));
            }
        }
        let node = match &self.target {
            None => geer.entry,
            Some(name) => geer
                .definition_of(name)
                .ok_or_else(|| EductionError::InvalidDemand(format!("`{name}` is not defined in the program")))?,
        };
        Ok((node, self.context.clone()))
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for Query {
    type Err = EductionError;

    fn from_str(s: &str) -> Result<Query, EductionError> {
        let bad = |m: &str| EductionError::InvalidDemand(format!("{m} in `{s}`"));
        let (target, ctx) = match s.split_once('@') {
            Some((t, c)) => (t.trim(), Some(c.trim())),
            None if s.trim_start().starts_with('{') => ("", Some(s.trim())),
            None => (s.trim(), None),
        };
        let target = match target {
            "" | "_" => None,
            t if is_ident(t) => Some(t.to_owned()),
            _ => return Err(bad("expected an identifier before `@`")),
        };
        let mut context = Context::new();
        if let Some(c) = ctx {
            let inner = c
                .strip_prefix('{')
                .and_then(|c| c.strip_suffix('}'))
                .ok_or_else(|| bad("context must be written as {dim:tag, ...}"))?;
            for pair in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (dim, tag) = pair.split_once(':').ok_or_else(|| bad("expected dim:tag"))?;
                let dim = dim.trim();
                if !is_ident(dim) {
                    return Err(bad("bad dimension name"));
                }
                if context.dimensions().any(|d| d == dim) {
                    return Err(bad("dimension given twice"));
                }
                let tag: i64 = tag.trim().parse().map_err(|_| bad("tags are integers"))?;
                context = context.with_tag(dim, tag);
            }
        }
        Ok(Query { target, context })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ {{", self.target.as_deref().unwrap_or("_"))?;
        for (i, (d, t)) in self.context.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}:{t}")?;
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile;

    #[test]
    fn parses_queries() {
        let q: Query = "N @ {t:5, s:-1}".parse().unwrap();
        assert_eq!(q.target.as_deref(), Some("N"));
        assert_eq!(q.context, Context::from_pairs([("t", 5), ("s", -1)]));
        assert_eq!("@ {t:0}".parse::<Query>().unwrap().target, None);
        assert_eq!("{t:3}".parse::<Query>().unwrap().context.tag("t"), 3);
        assert_eq!("_".parse::<Query>().unwrap(), Query::entry(Context::new()));
        for bad in ["N @ t:5", "N @ {t}", "N @ {t:x}", "1+2 @ {t:1}", "N @ {t:1, t:2}"] {
            assert!(bad.parse::<Query>().is_err(), "{bad}");
        }
        assert_eq!(q.to_string().parse::<Query>().unwrap(), q);
    }

    #[test]
    fn resolves_against_a_program() {
        let g = compile("N where dimension t; N = 0 fby.t (N + 1); end").unwrap();
        let (node, _) = "N @ {t:2}".parse::<Query>().unwrap().resolve(&g).unwrap();
        assert_eq!(Some(node), g.definition_of("N"));
        assert!("M @ {t:2}".parse::<Query>().unwrap().resolve(&g).is_err());
        assert_eq!(
            "@ {u:2}".parse::<Query>().unwrap().resolve(&g),
            Err(EductionError::UnknownDimension("u".into()))
        );
    }
}
