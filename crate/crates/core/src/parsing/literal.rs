//! Tolerant parser for JSON-like and Python-literal-like text.
//!
//! Accepts everything JSON accepts plus single-quoted strings, trailing
//! commas, raw control characters inside strings, and bare words (`yes`,
//! `True`, `None`). Never evaluates anything.

use serde_json::{Map, Number, Value};

const MAX_DEPTH: usize = 64;

pub(crate) struct Parsed {
    pub value: Value,
    /// Byte offset just past the literal.
    pub end: usize,
    /// True when the literal used syntax outside strict JSON.
    pub relaxed: bool,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    relaxed: bool,
}

/// Parse one literal starting at byte offset `start` (which must be a char
/// boundary). Returns `None` when the text there is not a complete literal.
pub(crate) fn parse_at(src: &str, start: usize) -> Option<Parsed> {
    let mut p = Parser {
        src,
        pos: start,
        relaxed: false,
    };
    let value = p.value(0)?;
    Some(Parsed {
        value,
        end: p.pos,
        relaxed: p.relaxed,
    })
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn value(&mut self, depth: usize) -> Option<Value> {
        if depth > MAX_DEPTH {
            return None;
        }
        self.skip_ws();
        match self.peek()? {
            '{' => self.object(depth),
            '[' => self.array(depth),
            '"' | '\'' => self.string().map(Value::String),
            c if c == '-' || c.is_ascii_digit() => self.number(),
            c if c.is_alphabetic() || c == '_' => self.word(),
            _ => None,
        }
    }

    fn object(&mut self, depth: usize) -> Option<Value> {
        self.bump();
        let mut map = Map::new();
        loop {
            self.skip_ws();
            match self.peek()? {
                '}' => {
                    self.bump();
                    return Some(Value::Object(map));
                }
                _ => {
                    let key = match self.peek()? {
                        '"' | '\'' => self.string()?,
                        c if c.is_alphabetic() || c == '_' => {
                            self.relaxed = true;
                            self.bare()
                        }
                        _ => return None,
                    };
                    self.skip_ws();
                    if self.bump()? != ':' {
                        return None;
                    }
                    let value = self.value(depth + 1)?;
                    map.insert(key, value);
                    self.skip_ws();
                    match self.bump()? {
                        ',' => {
                            self.skip_ws();
                            if self.peek()? == '}' {
                                self.relaxed = true;
                            }
                        }
                        '}' => return Some(Value::Object(map)),
                        _ => return None,
                    }
                }
            }
        }
    }

    fn array(&mut self, depth: usize) -> Option<Value> {
        self.bump();
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek()? == ']' {
                self.bump();
                return Some(Value::Array(items));
            }
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.bump()? {
                ',' => {
                    self.skip_ws();
                    if self.peek()? == ']' {
                        self.relaxed = true;
                    }
                }
                ']' => return Some(Value::Array(items)),
                _ => return None,
            }
        }
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.bump()?;
        if quote == '\'' {
            self.relaxed = true;
        }
        let mut out = String::new();
        loop {
            let c = self.bump()?;
            if c == quote {
                return Some(out);
            }
            if c == '\\' {
                let esc = self.bump()?;
                match esc {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'b' => out.push('\u{8}'),
                    'f' => out.push('\u{c}'),
                    '/' | '\\' | '"' => out.push(esc),
                    '\'' => {
                        self.relaxed = true;
                        out.push('\'');
                    }
                    'u' => out.push(self.unicode_escape()?),
                    other => {
                        self.relaxed = true;
                        out.push('\\');
                        out.push(other);
                    }
                }
            } else {
                if c.is_control() {
                    self.relaxed = true;
                }
                out.push(c);
            }
        }
    }

    fn hex4(&mut self) -> Option<u32> {
        let digits = self.src.get(self.pos..self.pos + 4)?;
        let v = u32::from_str_radix(digits, 16).ok()?;
        self.pos += 4;
        Some(v)
    }

    fn unicode_escape(&mut self) -> Option<char> {
        let hi = self.hex4()?;
        if (0xD800..0xDC00).contains(&hi) {
            if self.src[self.pos..].starts_with("\\u") {
                let save = self.pos;
                self.pos += 2;
                if let Some(lo) = self.hex4().filter(|lo| (0xDC00..0xE000).contains(lo)) {
                    let code = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
                    return char::from_u32(code);
                }
                self.pos = save;
            }
            return Some(char::REPLACEMENT_CHARACTER);
        }
        Some(char::from_u32(hi).unwrap_or(char::REPLACEMENT_CHARACTER))
    }

    fn number(&mut self) -> Option<Value> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                self.bump();
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        if let Ok(i) = text.parse::<i64>() {
            return Some(Value::Number(i.into()));
        }
        let f: f64 = text.parse().ok()?;
        Number::from_f64(f).map(Value::Number)
    }

    fn bare(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '-' {
                self.bump();
            } else {
                break;
            }
        }
        self.src[start..self.pos].to_string()
    }

    fn word(&mut self) -> Option<Value> {
        let word = self.bare();
        Some(match word.as_str() {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            "null" => Value::Null,
            _ => {
                self.relaxed = true;
                match word.as_str() {
                    "True" => Value::Bool(true),
                    "False" => Value::Bool(false),
                    "None" => Value::Null,
                    _ => Value::String(word),
                }
            }
        })
    }
}
