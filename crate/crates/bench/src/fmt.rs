//! Locale-free `%g`-style number formatting and CSV assembly.

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Comma-separated lines with a header, LF endings.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    out: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut csv = Self {
            out: String::new(),
            columns: header.len(),
        };
        csv.push_raw(header.iter().map(|s| s.as_ref().to_string()).collect());
        csv
    }

    pub fn push_raw(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns, "row width must match the header");
        self.out.push_str(&cells.join(","));
        self.out.push('\n');
    }

    pub fn into_string(self) -> String {
        self.out
    }
}

/// A CSV cell.
pub enum Cell<'a> {
    F(f64),
    I(usize),
    S(&'a str),
}

impl Cell<'_> {
    pub fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_g(*v),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.to_string(),
        }
    }
}

pub fn row(cells: &[Cell<'_>]) -> Vec<String> {
    cells.iter().map(Cell::render).collect()
}
