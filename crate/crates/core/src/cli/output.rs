//! CSV emission. Reals are written in scientific notation with 17
//! significant digits so every value round-trips to the same `f64`; the
//! formatting does not depend on the process locale.

use std::fmt::Write as _;

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table preceded by `#` comment lines.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(mut self, text: impl Into<String>) -> Self {
        self.comments.push(text.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "# columns: {}", self.header.join(","));
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_comments_header_rows() {
        let mut t = CsvTable::new(&["a", "b"]).comment("hello");
        t.push(vec!["1".into(), real(0.5)]);
        assert_eq!(t.render(), "# hello\n# columns: a,b\na,b\n1,5.0000000000000000e-1\n");
    }

    proptest! {
        #[test]
        fn reals_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let s = real(v);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            prop_assert_eq!(mantissa.len(), 17);
        }
    }
}
