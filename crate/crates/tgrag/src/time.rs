//! Timestamps at four calendar granularities and the arithmetic the time
//! hierarchy is built on.
//!
//! Canonical text forms are `YYYY`, `YYYY-Qn`, `YYYY-MM`, and `YYYY-MM-DD`.
//! Every timestamp denotes a calendar interval; coarser timestamps contain
//! the finer ones that fall inside them (2022 contains 2022-Q4 contains
//! 2022-11 contains 2022-11-03).

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Granularity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Year,
    Quarter,
    Month,
    Day,
}

impl Granularity {
    /// Ordering rank, coarsest first.
    pub fn rank(self) -> u8 {
        match self {
            Granularity::Year => 0,
            Granularity::Quarter => 1,
            Granularity::Month => 2,
            Granularity::Day => 3,
        }
    }

    pub const ALL: [Granularity; 4] = [
        Granularity::Year,
        Granularity::Quarter,
        Granularity::Month,
        Granularity::Day,
    ];
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Granularity::Year => "year",
            Granularity::Quarter => "quarter",
            Granularity::Month => "month",
            Granularity::Day => "day",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Timestamp
// ---------------------------------------------------------------------------

/// A normalized timestamp at one of the four granularities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Timestamp {
    Year(i32),
    Quarter(i32, u8),
    Month(i32, u8),
    Day(i32, u8, u8),
}

impl Timestamp {
    pub fn granularity(&self) -> Granularity {
        match self {
            Timestamp::Year(_) => Granularity::Year,
            Timestamp::Quarter(..) => Granularity::Quarter,
            Timestamp::Month(..) => Granularity::Month,
            Timestamp::Day(..) => Granularity::Day,
        }
    }

    pub fn year(&self) -> i32 {
        match *self {
            Timestamp::Year(y)
            | Timestamp::Quarter(y, _)
            | Timestamp::Month(y, _)
            | Timestamp::Day(y, _, _) => y,
        }
    }

    /// The immediate parent, one granularity coarser. Years have none.
    /// Quarters derive from months as Q = ceil(month / 3).
    pub fn parent(&self) -> Option<Timestamp> {
        match *self {
            Timestamp::Year(_) => None,
            Timestamp::Quarter(y, _) => Some(Timestamp::Year(y)),
            Timestamp::Month(y, m) => Some(Timestamp::Quarter(y, (m - 1) / 3 + 1)),
            Timestamp::Day(y, m, _) => Some(Timestamp::Month(y, m)),
        }
    }

    /// Chain of strictly coarser timestamps up to the year.
    /// `Day -> [Month, Quarter, Year]`, `Year -> []`.
    pub fn ancestors(&self) -> Vec<Timestamp> {
        let mut out = Vec::with_capacity(3);
        let mut cur = *self;
        while let Some(p) = cur.parent() {
            out.push(p);
            cur = p;
        }
        out
    }

    /// First calendar day covered by this timestamp.
    pub fn start_date(&self) -> NaiveDate {
        let (y, m, d) = match *self {
            Timestamp::Year(y) => (y, 1, 1),
            Timestamp::Quarter(y, q) => (y, (q as u32 - 1) * 3 + 1, 1),
            Timestamp::Month(y, m) => (y, m as u32, 1),
            Timestamp::Day(y, m, d) => (y, m as u32, d as u32),
        };
        NaiveDate::from_ymd_opt(y, m, d).expect("validated on construction")
    }

    /// Last calendar day covered by this timestamp.
    pub fn end_date(&self) -> NaiveDate {
        match *self {
            Timestamp::Year(y) => NaiveDate::from_ymd_opt(y, 12, 31).unwrap(),
            Timestamp::Quarter(y, q) => last_day_of_month(y, q as u32 * 3),
            Timestamp::Month(y, m) => last_day_of_month(y, m as u32),
            Timestamp::Day(..) => self.start_date(),
        }
    }

    /// True when `self`'s interval contains `other`'s (equality counts).
    /// Because all intervals are nested calendar buckets this is equivalent
    /// to `other == self` or `self ∈ ancestors(other)`.
    pub fn contains(&self, other: &Timestamp) -> bool {
        self == other || other.ancestors().contains(self)
    }

    /// Interval overlap in either direction: one contains the other.
    /// Calendar buckets never partially overlap.
    pub fn overlaps(&self, other: &Timestamp) -> bool {
        self.contains(other) || other.contains(self)
    }

    /// Next timestamp at the same granularity (one year, quarter, month, or
    /// day later).
    pub fn successor(&self) -> Option<Timestamp> {
        match *self {
            Timestamp::Year(y) => y.checked_add(1).map(Timestamp::Year),
            Timestamp::Quarter(y, 4) => Some(Timestamp::Quarter(y + 1, 1)),
            Timestamp::Quarter(y, q) => Some(Timestamp::Quarter(y, q + 1)),
            Timestamp::Month(y, 12) => Some(Timestamp::Month(y + 1, 1)),
            Timestamp::Month(y, m) => Some(Timestamp::Month(y, m + 1)),
            Timestamp::Day(y, m, d) => {
                let next = NaiveDate::from_ymd_opt(y, m as u32, d as u32)?.succ_opt()?;
                Some(Timestamp::Day(
                    next.year(),
                    next.month() as u8,
                    next.day() as u8,
                ))
            }
        }
    }

    /// Enumerate the inclusive range `[a, b]` at their shared granularity.
    /// Errors if the granularities differ.
    pub fn range_inclusive(a: &Timestamp, b: &Timestamp) -> Result<Vec<Timestamp>> {
        if a.granularity() != b.granularity() {
            return Err(Error::InvalidArgument(format!(
                "range endpoints must share a granularity: {a} vs {b}"
            )));
        }
        let (lo, hi) = if a <= b { (*a, *b) } else { (*b, *a) };
        let mut out = vec![lo];
        let mut cur = lo;
        while cur < hi {
            match cur.successor() {
                Some(next) => {
                    out.push(next);
                    cur = next;
                }
                None => break,
            }
        }
        Ok(out)
    }
}

fn last_day_of_month(year: i32, month: u32) -> NaiveDate {
    let (ny, nm) = if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    };
    NaiveDate::from_ymd_opt(ny, nm, 1)
        .unwrap()
        .pred_opt()
        .unwrap()
}

// Chronological by interval start; coarser granularity first on ties, so a
// year sorts before its own first quarter. This is the order time nodes are
// listed and persisted in.
impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.start_date()
            .cmp(&other.start_date())
            .then(self.granularity().rank().cmp(&other.granularity().rank()))
            // distinct intervals sharing start and granularity cannot occur
            .then_with(|| self.end_date().cmp(&other.end_date()))
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Timestamp::Year(y) => write!(f, "{y:04}"),
            Timestamp::Quarter(y, q) => write!(f, "{y:04}-Q{q}"),
            Timestamp::Month(y, m) => write!(f, "{y:04}-{m:02}"),
            Timestamp::Day(y, m, d) => write!(f, "{y:04}-{m:02}-{d:02}"),
        }
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Timestamp> {
        parse_timestamp(s)
    }
}

/// Parse a timestamp in one of the accepted forms. Non-canonical digit
/// counts (`2022-1-5`) are accepted and normalized; anything else is
/// `MalformedTimestamp`, and well-formed but impossible dates (month 13,
/// Feb 30, Q5) are `InvalidDate`.
pub fn parse_timestamp(text: &str) -> Result<Timestamp> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::MalformedTimestamp(text.to_string()));
    }
    let malformed = || Error::MalformedTimestamp(text.to_string());
    let invalid = || Error::InvalidDate(text.to_string());

    let parts: Vec<&str> = t.split('-').collect();
    let year_part = parts[0];
    if year_part.len() != 4 || !year_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    let year: i32 = year_part.parse().map_err(|_| malformed())?;

    match parts.as_slice() {
        [_] => Ok(Timestamp::Year(year)),
        [_, q] if q.starts_with('Q') || q.starts_with('q') => {
            let digits = &q[1..];
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(malformed());
            }
            let quarter: u8 = digits.parse().map_err(|_| malformed())?;
            if !(1..=4).contains(&quarter) {
                return Err(invalid());
            }
            Ok(Timestamp::Quarter(year, quarter))
        }
        [_, m] => {
            let month = parse_two_digit(m).ok_or_else(malformed)?;
            if !(1..=12).contains(&month) {
                return Err(invalid());
            }
            Ok(Timestamp::Month(year, month))
        }
        [_, m, d] => {
            let month = parse_two_digit(m).ok_or_else(malformed)?;
            let day = parse_two_digit(d).ok_or_else(malformed)?;
            if NaiveDate::from_ymd_opt(year, month as u32, day as u32).is_none() {
                return Err(invalid());
            }
            Ok(Timestamp::Day(year, month, day))
        }
        _ => Err(malformed()),
    }
}

fn parse_two_digit(s: &str) -> Option<u8> {
    if s.is_empty() || s.len() > 2 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_timestamp(&s).map_err(de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_granularities() {
        assert_eq!(
            parse_timestamp("2022-01-01").unwrap(),
            Timestamp::Day(2022, 1, 1)
        );
        assert_eq!(
            parse_timestamp("2020-Q3").unwrap(),
            Timestamp::Quarter(2020, 3)
        );
        assert_eq!(parse_timestamp("2023").unwrap(), Timestamp::Year(2023));
        assert_eq!(
            parse_timestamp("2022-07").unwrap(),
            Timestamp::Month(2022, 7)
        );
        // non-canonical digit counts normalize
        assert_eq!(
            parse_timestamp("2022-1-5").unwrap(),
            Timestamp::Day(2022, 1, 5)
        );
        assert_eq!(
            parse_timestamp(" 2020-q2 ").unwrap(),
            Timestamp::Quarter(2020, 2)
        );
    }

    #[test]
    fn rejects_malformed_and_invalid() {
        assert!(matches!(
            parse_timestamp("20 22"),
            Err(Error::MalformedTimestamp(_))
        ));
        assert!(matches!(
            parse_timestamp(""),
            Err(Error::MalformedTimestamp(_))
        ));
        assert!(matches!(
            parse_timestamp("Q3-2020"),
            Err(Error::MalformedTimestamp(_))
        ));
        assert!(matches!(
            parse_timestamp("2022-13"),
            Err(Error::InvalidDate(_))
        ));
        assert!(matches!(
            parse_timestamp("2022-Q5"),
            Err(Error::InvalidDate(_))
        ));
        assert!(matches!(
            parse_timestamp("2023-02-30"),
            Err(Error::InvalidDate(_))
        ));
        assert!(matches!(
            parse_timestamp("2022-01-01-05"),
            Err(Error::MalformedTimestamp(_))
        ));
    }

    #[test]
    fn render_parse_round_trip() {
        let samples = [
            Timestamp::Year(2023),
            Timestamp::Quarter(2020, 3),
            Timestamp::Month(2022, 11),
            Timestamp::Day(2024, 2, 29),
        ];
        for t in samples {
            assert_eq!(parse_timestamp(&t.to_string()).unwrap(), t);
        }
    }

    #[test]
    fn ancestor_chains() {
        assert_eq!(
            Timestamp::Day(2020, 7, 15).ancestors(),
            vec![
                Timestamp::Month(2020, 7),
                Timestamp::Quarter(2020, 3),
                Timestamp::Year(2020)
            ]
        );
        assert_eq!(Timestamp::Year(2023).ancestors(), Vec::<Timestamp>::new());
        assert_eq!(
            Timestamp::Quarter(2022, 2).ancestors(),
            vec![Timestamp::Year(2022)]
        );
        // chain lengths per granularity
        assert_eq!(Timestamp::Day(2021, 1, 1).ancestors().len(), 3);
        assert_eq!(Timestamp::Month(2021, 1).ancestors().len(), 2);
        assert_eq!(Timestamp::Quarter(2021, 1).ancestors().len(), 1);
    }

    #[test]
    fn containment_and_overlap() {
        let y = Timestamp::Year(2022);
        let q = Timestamp::Quarter(2022, 4);
        let d = Timestamp::Day(2022, 11, 3);
        assert!(y.contains(&q));
        assert!(y.contains(&d));
        assert!(!q.contains(&y));
        assert!(q.overlaps(&y));
        assert!(!Timestamp::Quarter(2023, 1).overlaps(&Timestamp::Quarter(2020, 3)));
        assert!(!Timestamp::Year(2021).contains(&Timestamp::Quarter(2022, 1)));
        // Q4 contains its months but not October of another year
        assert!(q.contains(&Timestamp::Month(2022, 10)));
        assert!(!q.contains(&Timestamp::Month(2021, 10)));
    }

    #[test]
    fn ordering_is_chronological_then_coarse_first() {
        let mut v = vec![
            Timestamp::Quarter(2020, 2),
            Timestamp::Year(2020),
            Timestamp::Day(2020, 1, 2),
            Timestamp::Month(2020, 1),
            Timestamp::Quarter(2020, 1),
            Timestamp::Day(2020, 1, 1),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                Timestamp::Year(2020),
                Timestamp::Quarter(2020, 1),
                Timestamp::Month(2020, 1),
                Timestamp::Day(2020, 1, 1),
                Timestamp::Day(2020, 1, 2),
                Timestamp::Quarter(2020, 2),
            ]
        );
    }

    #[test]
    fn range_enumeration() {
        let got =
            Timestamp::range_inclusive(&Timestamp::Quarter(2022, 2), &Timestamp::Quarter(2022, 4))
                .unwrap();
        assert_eq!(
            got,
            vec![
                Timestamp::Quarter(2022, 2),
                Timestamp::Quarter(2022, 3),
                Timestamp::Quarter(2022, 4)
            ]
        );
        // crosses a year boundary
        let got =
            Timestamp::range_inclusive(&Timestamp::Month(2021, 11), &Timestamp::Month(2022, 2))
                .unwrap();
        assert_eq!(got.len(), 4);
        assert!(
            Timestamp::range_inclusive(&Timestamp::Year(2020), &Timestamp::Quarter(2020, 1))
                .is_err()
        );
        // reversed endpoints normalize
        let got =
            Timestamp::range_inclusive(&Timestamp::Year(2023), &Timestamp::Year(2021)).unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn serde_uses_canonical_text() {
        let t = Timestamp::Quarter(2020, 3);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "\"2020-Q3\"");
        let back: Timestamp = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
