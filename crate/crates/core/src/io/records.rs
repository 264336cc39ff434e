use std::fmt::Write;
use std::str::FromStr;

use crate::error::FormatError;

/// 17 significant digits, enough to read back the same `f64`.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn push_floats(line: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(line, " {v:.16e}");
    }
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Whitespace-separated records, skipping blank lines and `#` comments.
pub struct Records<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

pub struct Record<'a> {
    pub line: usize,
    pub tag: &'a str,
    fields: Vec<&'a str>,
    rest: &'a str,
}

impl<'a> Records<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
            last_line: 0,
        }
    }

    fn skip_blank(&mut self) {
        while let Some((_, l)) = self.lines.peek() {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                self.lines.next();
            } else {
                break;
            }
        }
    }

    pub fn next_record(&mut self) -> Option<Record<'a>> {
        self.skip_blank();
        let (i, l) = self.lines.next()?;
        self.last_line = i + 1;
        let l = l.trim();
        let (tag, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
        Some(Record {
            line: i + 1,
            tag,
            fields: rest.split_whitespace().collect(),
            rest: rest.trim(),
        })
    }

    pub fn peek_tag(&mut self) -> Option<&'a str> {
        self.skip_blank();
        self.lines
            .peek()
            .map(|(_, l)| l.trim().split_whitespace().next().unwrap_or(""))
    }

    /// The next record, which must carry `tag`.
    pub fn expect(&mut self, tag: &str) -> Result<Record<'a>, FormatError> {
        match self.next_record() {
            Some(r) if r.tag == tag => Ok(r),
            Some(r) => Err(FormatError::Parse {
                line: r.line,
                message: format!("expected {tag:?} record, found {:?}", r.tag),
            }),
            None => Err(FormatError::Truncated(format!("missing {tag:?} record after line {}", self.last_line))),
        }
    }

    /// Checks the `<magic> <version>` header line.
    pub fn header(&mut self, expected: &'static str) -> Result<(), FormatError> {
        let r = self
            .next_record()
            .ok_or_else(|| FormatError::Truncated("empty file".into()))?;
        let found = format!("{} {}", r.tag, r.rest);
        if found != expected {
            return Err(FormatError::Version {
                line: r.line,
                found,
                expected,
            });
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), FormatError> {
        match self.next_record() {
            None => Ok(()),
            Some(r) => Err(FormatError::Parse {
                line: r.line,
                message: format!("unexpected {:?} record", r.tag),
            }),
        }
    }
}

impl<'a> Record<'a> {
    pub fn error(&self, message: impl Into<String>) -> FormatError {
        FormatError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    pub fn reference(&self, message: impl Into<String>) -> FormatError {
        FormatError::Reference {
            line: self.line,
            message: message.into(),
        }
    }

    pub fn expect_len(&self, n: usize) -> Result<(), FormatError> {
        if self.fields.len() == n {
            Ok(())
        } else {
            Err(self.error(format!("{} record needs {n} fields, found {}", self.tag, self.fields.len())))
        }
    }

    /// Everything after the tag, verbatim.
    pub fn rest(&self) -> &'a str {
        self.rest
    }

    pub fn str(&self, i: usize) -> Result<&'a str, FormatError> {
        self.fields
            .get(i)
            .copied()
            .ok_or_else(|| self.error(format!("{} record: missing field {}", self.tag, i + 1)))
    }

    pub fn get<T: FromStr>(&self, i: usize, what: &str) -> Result<T, FormatError> {
        let s = self.str(i)?;
        s.parse().map_err(|_| self.error(format!("invalid {what} {s:?}")))
    }

    pub fn float(&self, i: usize, what: &str) -> Result<f64, FormatError> {
        let v: f64 = self.get(i, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.error(format!("non-finite {what}")))
        }
    }

    pub fn floats<const N: usize>(&self, start: usize, what: &str) -> Result<[f64; N], FormatError> {
        let mut out = [0.0; N];
        for (k, v) in out.iter_mut().enumerate() {
            *v = self.float(start + k, what)?;
        }
        Ok(out)
    }

    /// `-` reads as `None`.
    pub fn optional<T: FromStr>(&self, i: usize, what: &str) -> Result<Option<T>, FormatError> {
        match self.str(i)? {
            "-" => Ok(None),
            _ => self.get(i, what).map(Some),
        }
    }
}
