//! CSV output: comma-separated, header row, `\n` line endings, numbers
//! printed like C's `%.15g`.

const SIGNIFICANT: i32 = 15;

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Shortest of fixed or scientific notation with 15 significant digits,
/// trailing zeros removed.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", (SIGNIFICANT - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..SIGNIFICANT).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        let decimals = (SIGNIFICANT - 1 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

pub fn format_optional(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

#[derive(Debug, Default)]
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut csv = Csv::default();
        csv.row(header);
        csv
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(f.as_ref());
        }
        self.buf.push('\n');
    }

    pub fn numbers(&mut self, values: &[f64]) {
        let fields: Vec<String> = values.iter().map(|&v| format_number(v)).collect();
        self.row(&fields);
    }

    /// Start a further table in the same stream, separated by a blank line.
    pub fn section<S: AsRef<str>>(&mut self, header: &[S]) {
        self.buf.push('\n');
        self.row(header);
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Parse a CSV trajectory `t,phi_1,...,phi_I` (header row first).
pub fn parse_trajectory(text: &str, dim: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), String> {
    let mut times = Vec::new();
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            break;
        }
        let values: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let values = values.map_err(|_| format!("line {}: expected numbers", i + 1))?;
        if values.len() != dim + 1 {
            return Err(format!(
                "line {}: expected {} columns, got {}",
                i + 1,
                dim + 1,
                values.len()
            ));
        }
        if times.last().is_some_and(|&t| values[0] < t) {
            return Err(format!("line {}: times must be non-decreasing", i + 1));
        }
        times.push(values[0]);
        points.push(values[1..].to_vec());
    }
    if times.is_empty() {
        return Err("reference trajectory has no rows".into());
    }
    Ok((times, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g15() {
        // expectations from printf("%.15g")
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (-3.1430e-4, "-0.0003143"),
            (1.0 / 3.0, "0.333333333333333"),
            (6.5598e-4, "0.00065598"),
            (1e-5, "1e-05"),
            (1.2345e-7, "1.2345e-07"),
            (123456789012345.0, "123456789012345"),
            (1234567890123456.0, "1.23456789012346e+15"),
            (0.9996645373720975, "0.999664537372097"),
            (100.0, "100"),
            (9.999999999999999, "10"),
        ];
        for (x, expected) in cases {
            assert_eq!(format_number(x), expected, "{x}");
        }
        // negative zero is printed without its sign
        assert_eq!(format_number(-0.0), "0");
    }

    #[test]
    fn csv_layout() {
        let mut csv = Csv::new(&["t", "phi_a"]);
        csv.numbers(&[0.0, 1.0]);
        csv.row(&["2", ""]);
        csv.section(&["k", "count"]);
        csv.numbers(&[3.0, 4.0]);
        assert_eq!(csv.finish(), "t,phi_a\n0,1\n2,\n\nk,count\n3,4\n");
    }

    #[test]
    fn trajectory_round_trip() {
        let (t, p) = parse_trajectory("t,phi_a,phi_b\n0,1,0\n1,0.5,0.5\n", 2).unwrap();
        assert_eq!(t, vec![0.0, 1.0]);
        assert_eq!(p[1], vec![0.5, 0.5]);
        assert!(parse_trajectory("t,a\n0,1\n", 2).is_err());
        assert!(parse_trajectory("t,a,b\n1,1,0\n0,1,0\n", 2).is_err());
        assert!(parse_trajectory("t,a,b\n", 2).is_err());
    }
}
