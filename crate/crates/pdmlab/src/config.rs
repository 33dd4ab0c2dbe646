//! Flat `key = value` configuration text.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, got `{}`", n + 1, line)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value `{}` for key `{}`", value, key)))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{}` for key `{}`", value, key))),
    }
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

pub fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Value types usable as config fields.
pub trait ParseKv: Sized {
    fn parse_kv(key: &str, value: &str) -> Result<Self>;
    fn fmt_kv(&self) -> String;
}

macro_rules! scalar_kv {
    ($($t:ty),*) => {$(
        impl ParseKv for $t {
            fn parse_kv(key: &str, value: &str) -> Result<Self> {
                parse_value(key, value)
            }
            fn fmt_kv(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
scalar_kv!(f64, usize, u64, String);

impl ParseKv for bool {
    fn parse_kv(key: &str, value: &str) -> Result<Self> {
        parse_bool(key, value)
    }
    fn fmt_kv(&self) -> String {
        self.to_string()
    }
}

impl<T: FromStr + ToString> ParseKv for Vec<T> {
    fn parse_kv(key: &str, value: &str) -> Result<Self> {
        parse_list(key, value)
    }
    fn fmt_kv(&self) -> String {
        fmt_list(self)
    }
}

impl<const N: usize> ParseKv for [f64; N] {
    fn parse_kv(key: &str, value: &str) -> Result<Self> {
        let v: Vec<f64> = parse_list(key, value)?;
        v.try_into()
            .map_err(|_| Error::Config(format!("key `{}` needs exactly {} values", key, N)))
    }
    fn fmt_kv(&self) -> String {
        fmt_list(self)
    }
}

/// Implements `set_key` / `entries` for a config struct under a key prefix.
#[macro_export]
macro_rules! kv_config {
    ($ty:ty, $prefix:literal, { $($key:literal => $field:ident),* $(,)? }) => {
        impl $ty {
            /// Applies one key; returns `false` when the key is not part of this section.
            pub fn set_key(&mut self, key: &str, value: &str) -> $crate::Result<bool> {
                match key {
                    $( concat!($prefix, ".", $key) => {
                        self.$field = $crate::config::ParseKv::parse_kv(key, value)?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            /// All keys with their current values.
            pub fn entries(&self) -> Vec<(String, String)> {
                vec![$( (concat!($prefix, ".", $key).to_string(), $crate::config::ParseKv::fmt_kv(&self.$field)) ),*]
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_with_comments() {
        let p = parse_pairs("# top\n a = 1 \n\nb=x # trailing\n").unwrap();
        assert_eq!(p, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(parse_pairs("novalue"), Err(Error::Config(_))));
        assert!(matches!(parse_value::<f64>("k", "abc"), Err(Error::Config(_))));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<u64>("s", "1, 2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(fmt_list(&[1.5, 2.0]), "1.5,2");
    }
}
