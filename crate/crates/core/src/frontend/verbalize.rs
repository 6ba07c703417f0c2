//! Rule-based expansion of non-standard words into spoken words.
//!
//! Output style: lowercase, numbers as separate words without hyphens, no
//! "and" inside numbers.

use crate::labels::NswClass;

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 10] =
    ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];
const SCALES: [(u64, &str); 3] =
    [(1_000_000_000, "billion"), (1_000_000, "million"), (1_000, "thousand")];

pub const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot verbalize {text:?} as {class}: {reason}")]
pub struct VerbalizeError {
    pub text: String,
    pub class: NswClass,
    pub reason: String,
}

/// Expands `text` (tokens of one span joined by single spaces) as `class`.
pub fn verbalize(text: &str, class: NswClass) -> Result<Vec<String>, VerbalizeError> {
    let fail = |reason: &str| VerbalizeError { text: text.to_string(), class, reason: reason.to_string() };
    let words = match class {
        NswClass::Cardinal => cardinal(text).ok_or_else(|| fail("expected an integer"))?,
        NswClass::Date => date(text).ok_or_else(|| fail("expected YYYY or <month> D [YYYY]"))?,
        NswClass::Money => money(text).ok_or_else(|| fail("expected $D, $D.CC or $D <scale>"))?,
        NswClass::Time => time(text).ok_or_else(|| fail("expected H:MM [am|pm]"))?,
        NswClass::Letters => letters(text).ok_or_else(|| fail("expected letters only"))?,
    };
    Ok(words.into_iter().map(str::to_string).collect())
}

/// Number words for `n`.
pub fn number_words(n: u64) -> Vec<&'static str> {
    if n == 0 {
        return vec![ONES[0]];
    }
    let mut out = Vec::new();
    let mut rest = n;
    for (scale, name) in SCALES {
        if rest >= scale {
            out.extend(number_words(rest / scale));
            out.push(name);
            rest %= scale;
        }
    }
    if rest >= 100 {
        out.push(ONES[(rest / 100) as usize]);
        out.push("hundred");
        rest %= 100;
    }
    if rest >= 20 {
        out.push(TENS[(rest / 10) as usize]);
        rest %= 10;
        if rest > 0 {
            out.push(ONES[rest as usize]);
        }
    } else if rest > 0 {
        out.push(ONES[rest as usize]);
    }
    out
}

fn ordinal_of(word: &str) -> &'static str {
    match word {
        "one" => "first",
        "two" => "second",
        "three" => "third",
        "four" => "fourth",
        "five" => "fifth",
        "six" => "sixth",
        "seven" => "seventh",
        "eight" => "eighth",
        "nine" => "ninth",
        "ten" => "tenth",
        "eleven" => "eleventh",
        "twelve" => "twelfth",
        "thirteen" => "thirteenth",
        "fourteen" => "fourteenth",
        "fifteen" => "fifteenth",
        "sixteen" => "sixteenth",
        "seventeen" => "seventeenth",
        "eighteen" => "eighteenth",
        "nineteen" => "nineteenth",
        "twenty" => "twentieth",
        "thirty" => "thirtieth",
        _ => unreachable!("ordinal of {word}"),
    }
}

fn parse_digits(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Digits with optional well-formed thousands separators.
fn parse_grouped(s: &str) -> Option<u64> {
    if !s.contains(',') {
        return parse_digits(s);
    }
    let mut groups = s.split(',');
    let head = groups.next()?;
    if head.is_empty() || head.len() > 3 {
        return None;
    }
    let mut digits = head.to_string();
    for g in groups {
        if g.len() != 3 {
            return None;
        }
        digits.push_str(g);
    }
    parse_digits(&digits)
}

fn cardinal(text: &str) -> Option<Vec<&'static str>> {
    if let Some(rest) = text.strip_prefix('-') {
        let mut v = vec!["minus"];
        v.extend(number_words(parse_grouped(rest)?));
        return Some(v);
    }
    Some(number_words(parse_grouped(text)?))
}

fn year_words(y: u64) -> Vec<&'static str> {
    let (hi, lo) = (y / 100, y % 100);
    if (2000..2010).contains(&y) || !(1000..10000).contains(&y) {
        return number_words(y);
    }
    let mut v = number_words(hi);
    match lo {
        0 => v.push("hundred"),
        1..=9 => {
            v.push("oh");
            v.extend(number_words(lo));
        }
        _ => v.extend(number_words(lo)),
    }
    v
}

fn date(text: &str) -> Option<Vec<&'static str>> {
    let parts: Vec<&str> = text.split(' ').collect();
    match parts.as_slice() {
        [y] if y.len() == 4 => Some(year_words(parse_digits(y)?)),
        [m, d] | [m, d, _] => {
            let month = MONTHS.iter().find(|&&name| name == m.to_lowercase())?;
            let day = parse_digits(d.trim_end_matches(','))?;
            if !(1..=31).contains(&day) {
                return None;
            }
            let mut v = vec![*month];
            let mut dw = number_words(day);
            let last = dw.pop()?;
            dw.push(ordinal_of(last));
            v.extend(dw);
            if let [_, _, y] = parts.as_slice() {
                if y.len() != 4 {
                    return None;
                }
                v.extend(year_words(parse_digits(y)?));
            }
            Some(v)
        }
        _ => None,
    }
}

fn money(text: &str) -> Option<Vec<&'static str>> {
    let (amount, scale) = match text.split_once(' ') {
        Some((a, s)) => (a, Some(s)),
        None => (text, None),
    };
    let amount = amount.strip_prefix('$')?;
    let (whole, frac) = match amount.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (amount, None),
    };
    let dollars = parse_grouped(whole)?;

    if let Some(scale) = scale {
        if !matches!(scale, "thousand" | "million" | "billion") {
            return None;
        }
        let mut v = number_words(dollars);
        if let Some(f) = frac {
            v.push("point");
            for c in f.chars() {
                v.push(ONES[c.to_digit(10)? as usize]);
            }
        }
        v.push(match scale {
            "thousand" => "thousand",
            "million" => "million",
            _ => "billion",
        });
        v.push("dollars");
        return Some(v);
    }

    let cents = match frac {
        None => 0,
        Some(f) if f.len() == 2 => parse_digits(f)?,
        Some(_) => return None,
    };
    let mut v = Vec::new();
    if dollars > 0 || cents == 0 {
        v.extend(number_words(dollars));
        v.push(if dollars == 1 { "dollar" } else { "dollars" });
    }
    if cents > 0 {
        v.extend(number_words(cents));
        v.push(if cents == 1 { "cent" } else { "cents" });
    }
    Some(v)
}

fn time(text: &str) -> Option<Vec<&'static str>> {
    let (clock, suffix) = match text.split_once(' ') {
        Some((c, s)) => (c, Some(s.to_lowercase())),
        None => (text, None),
    };
    let (h, m) = clock.split_once(':')?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return None;
    }
    let (hour, minute) = (parse_digits(h)?, parse_digits(m)?);
    if hour > 23 || minute > 59 {
        return None;
    }
    let mut v = number_words(hour);
    match minute {
        0 if suffix.is_none() => v.push("o'clock"),
        0 => {}
        1..=9 => {
            v.push("oh");
            v.extend(number_words(minute));
        }
        _ => v.extend(number_words(minute)),
    }
    match suffix.as_deref() {
        None => {}
        Some("am") => v.extend(["a", "m"]),
        Some("pm") => v.extend(["p", "m"]),
        Some(_) => return None,
    }
    Some(v)
}

const LETTER_WORDS: [&str; 26] = [
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r", "s",
    "t", "u", "v", "w", "x", "y", "z",
];

fn letters(text: &str) -> Option<Vec<&'static str>> {
    let v: Vec<&'static str> = text
        .chars()
        .filter(|&c| c != '.')
        .map(|c| c.is_ascii_alphabetic().then(|| LETTER_WORDS[(c.to_ascii_lowercase() as u8 - b'a') as usize]))
        .collect::<Option<_>>()?;
    (!v.is_empty()).then_some(v)
}
