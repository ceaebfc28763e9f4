//! Flat `key = value` text files with `#` comments.

use std::collections::BTreeMap;

use crate::CliError;

/// One parsed file: keys in file order are not kept, duplicates are errors.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(source: &str, text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(parse_error(source, line, format!("expected `key = value`, got `{body}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(parse_error(source, line, "empty key or value".into()));
            }
            if entries.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(parse_error(source, line, format!("duplicate key `{k}`")));
            }
        }
        Ok(Self { source: source.to_string(), entries })
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), CliError> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, (line, _))) => Err(parse_error(&self.source, *line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(parse_error(&self.source, *line, format!("`{key}`: not a finite number: `{v}`"))),
            },
        }
    }

    pub fn required(&self, key: &str) -> Result<f64, CliError> {
        self.number(key)?.ok_or_else(|| CliError::Parse(format!("{}: missing key `{key}`", self.source)))
    }
}

fn parse_error(source: &str, line: usize, msg: String) -> CliError {
    CliError::Parse(format!("{source}:{line}: {msg}"))
}

/// Formats `x` with 12 significant digits; parsing the result gives back
/// the value rounded to those digits.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.11e}")
    }
}
