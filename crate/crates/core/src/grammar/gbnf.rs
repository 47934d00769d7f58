//! A small GBNF reader: enough of the llama.cpp grammar dialect to check
//! conformance of model outputs and to generate random derivations.
//!
//! Supported: `name ::= ...` rules, string literals with `\" \\ \n \r \t
//! \xHH` escapes, character classes (`[a-z]`, `[^...]`), rule references,
//! grouping, alternation, and the `? * + {m} {m,} {m,n}` postfix operators.
//! A newline ends a rule unless it occurs inside parentheses or right after
//! `|`. `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("gbnf parse error at byte {offset}: {message}")]
pub struct GbnfError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Literal(Vec<char>),
    Class { ranges: Vec<(char, char)>, negated: bool },
    Ref(String),
    Seq(Vec<Expr>),
    Alt(Vec<Expr>),
    Repeat { expr: Box<Expr>, min: u32, max: Option<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    rules: BTreeMap<String, Expr>,
    root: String,
}

const MAX_DEPTH: usize = 256;

impl Grammar {
    pub fn parse(text: &str) -> Result<Self, GbnfError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut rules = BTreeMap::new();
        loop {
            p.skip_ws(true);
            if p.at_end() {
                break;
            }
            let name_at = p.pos;
            let name = p.ident()?;
            p.skip_ws(false);
            p.expect("::=")?;
            let body = p.alternatives(0)?;
            if rules.insert(name.clone(), body).is_some() {
                return Err(GbnfError {
                    offset: name_at,
                    message: format!("rule `{name}` defined twice"),
                });
            }
        }
        let g = Grammar {
            rules,
            root: "root".to_string(),
        };
        g.check_refs()?;
        Ok(g)
    }

    fn check_refs(&self) -> Result<(), GbnfError> {
        if !self.rules.contains_key(&self.root) {
            return Err(GbnfError {
                offset: 0,
                message: "no `root` rule".into(),
            });
        }
        fn walk(e: &Expr, rules: &BTreeMap<String, Expr>) -> Result<(), GbnfError> {
            match e {
                Expr::Ref(name) if !rules.contains_key(name) => Err(GbnfError {
                    offset: 0,
                    message: format!("undefined rule `{name}`"),
                }),
                Expr::Seq(xs) | Expr::Alt(xs) => xs.iter().try_for_each(|x| walk(x, rules)),
                Expr::Repeat { expr, .. } => walk(expr, rules),
                _ => Ok(()),
            }
        }
        self.rules.values().try_for_each(|e| walk(e, &self.rules))
    }

    pub fn rule(&self, name: &str) -> Option<&Expr> {
        self.rules.get(name)
    }

    pub fn rule_names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    /// True iff `candidate` derives from the root rule.
    pub fn accepts(&self, candidate: &str) -> bool {
        let input: Vec<char> = candidate.chars().collect();
        let root = &self.rules[&self.root];
        self.ends(root, &input, 0, 0).contains(&input.len())
    }

    /// All positions at which a match of `expr` starting at `start` can end.
    fn ends(&self, expr: &Expr, input: &[char], start: usize, depth: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        if depth > MAX_DEPTH {
            return out;
        }
        match expr {
            Expr::Literal(chars) => {
                if input.len() >= start + chars.len() && input[start..start + chars.len()] == chars[..] {
                    out.insert(start + chars.len());
                }
            }
            Expr::Class { ranges, negated } => {
                if let Some(&c) = input.get(start) {
                    let hit = ranges.iter().any(|&(lo, hi)| lo <= c && c <= hi);
                    if hit != *negated {
                        out.insert(start + 1);
                    }
                }
            }
            Expr::Ref(name) => {
                out = self.ends(&self.rules[name], input, start, depth + 1);
            }
            Expr::Seq(items) => {
                let mut frontier = BTreeSet::from([start]);
                for item in items {
                    let mut next = BTreeSet::new();
                    for &p in &frontier {
                        next.extend(self.ends(item, input, p, depth + 1));
                    }
                    if next.is_empty() {
                        return next;
                    }
                    frontier = next;
                }
                out = frontier;
            }
            Expr::Alt(options) => {
                for o in options {
                    out.extend(self.ends(o, input, start, depth + 1));
                }
            }
            Expr::Repeat { expr, min, max } => {
                let mut frontier = BTreeSet::from([start]);
                let mut seen = BTreeSet::new();
                if *min == 0 {
                    out.insert(start);
                }
                let mut count = 0u32;
                loop {
                    if max.is_some_and(|m| count >= m) {
                        break;
                    }
                    let mut next = BTreeSet::new();
                    for &p in &frontier {
                        next.extend(self.ends(expr, input, p, depth + 1));
                    }
                    count += 1;
                    if max.is_none() && count >= *min {
                        // Past the minimum, revisiting a position adds nothing.
                        next.retain(|p| !seen.contains(p));
                        seen.extend(next.iter().copied());
                    }
                    if next.is_empty() {
                        break;
                    }
                    if count >= *min {
                        out.extend(next.iter().copied());
                    }
                    frontier = next;
                }
            }
        }
        out
    }

    /// Produces one random string derivable from the root rule. Unbounded
    /// repetitions take at most `min + 3` iterations.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let mut out = String::new();
        self.derive(&self.rules[&self.root], rng, &mut out, 0);
        out
    }

    fn derive<R: Rng + ?Sized>(&self, expr: &Expr, rng: &mut R, out: &mut String, depth: usize) {
        if depth > MAX_DEPTH {
            return;
        }
        match expr {
            Expr::Literal(chars) => out.extend(chars),
            Expr::Class { ranges, negated } => out.push(sample_class(ranges, *negated, rng)),
            Expr::Ref(name) => self.derive(&self.rules[name], rng, out, depth + 1),
            Expr::Seq(items) => {
                for i in items {
                    self.derive(i, rng, out, depth + 1);
                }
            }
            Expr::Alt(options) => {
                let pick = rng.gen_range(0..options.len());
                self.derive(&options[pick], rng, out, depth + 1);
            }
            Expr::Repeat { expr, min, max } => {
                let hi = max.unwrap_or(min + 3);
                let n = rng.gen_range(*min..=hi);
                for _ in 0..n {
                    self.derive(expr, rng, out, depth + 1);
                }
            }
        }
    }
}

fn sample_class<R: Rng + ?Sized>(ranges: &[(char, char)], negated: bool, rng: &mut R) -> char {
    if negated {
        let pool: Vec<char> = (' '..='~')
            .filter(|c| !ranges.iter().any(|&(lo, hi)| lo <= *c && *c <= hi))
            .collect();
        return pool[rng.gen_range(0..pool.len())];
    }
    let total: u32 = ranges.iter().map(|&(lo, hi)| hi as u32 - lo as u32 + 1).sum();
    let mut k = rng.gen_range(0..total);
    for &(lo, hi) in ranges {
        let width = hi as u32 - lo as u32 + 1;
        if k < width {
            return char::from_u32(lo as u32 + k).unwrap_or(lo);
        }
        k -= width;
    }
    ranges[0].0
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(cs) => write!(f, "{:?}", cs.iter().collect::<String>()),
            Expr::Class { ranges, negated } => {
                write!(f, "[{}", if *negated { "^" } else { "" })?;
                for (lo, hi) in ranges {
                    if lo == hi {
                        write!(f, "{lo}")?;
                    } else {
                        write!(f, "{lo}-{hi}")?;
                    }
                }
                write!(f, "]")
            }
            Expr::Ref(n) => write!(f, "{n}"),
            Expr::Seq(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "({})", parts.join(" "))
            }
            Expr::Alt(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "({})", parts.join(" | "))
            }
            Expr::Repeat { expr, min, max } => match max {
                Some(m) => write!(f, "{expr}{{{min},{m}}}"),
                None => write!(f, "{expr}{{{min},}}"),
            },
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> GbnfError {
        GbnfError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self, newlines: bool) {
        while let Some(c) = self.peek() {
            match c {
                b' ' | b'\t' => self.pos += 1,
                b'\r' | b'\n' if newlines => self.pos += 1,
                b'#' => {
                    while self.peek().is_some_and(|c| c != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), GbnfError> {
        if self.src[self.pos..].starts_with(token.as_bytes()) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(self.err(format!("expected `{token}`")))
        }
    }

    fn ident(&mut self) -> Result<String, GbnfError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'-' || c == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a rule name"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn alternatives(&mut self, depth: usize) -> Result<Expr, GbnfError> {
        let mut options = vec![self.sequence(depth)?];
        loop {
            self.skip_ws(depth > 0);
            if self.peek() == Some(b'|') {
                self.pos += 1;
                self.skip_ws(true);
                options.push(self.sequence(depth)?);
            } else {
                break;
            }
        }
        Ok(if options.len() == 1 {
            options.pop().expect("one option")
        } else {
            Expr::Alt(options)
        })
    }

    fn sequence(&mut self, depth: usize) -> Result<Expr, GbnfError> {
        let mut items = Vec::new();
        loop {
            self.skip_ws(depth > 0);
            let item = match self.peek() {
                Some(b'"') => self.literal()?,
                Some(b'[') => self.class()?,
                Some(b'(') => {
                    self.pos += 1;
                    let inner = self.alternatives(depth + 1)?;
                    self.skip_ws(true);
                    self.expect(")")?;
                    inner
                }
                Some(c) if c.is_ascii_alphanumeric() || c == b'_' || c == b'-' => {
                    // A name followed by `::=` starts the next rule.
                    let save = self.pos;
                    let name = self.ident()?;
                    self.skip_ws(false);
                    if self.src[self.pos..].starts_with(b"::=") {
                        self.pos = save;
                        break;
                    }
                    Expr::Ref(name)
                }
                _ => break,
            };
            items.push(self.postfix(item)?);
        }
        if items.is_empty() {
            return Err(self.err("empty sequence"));
        }
        Ok(if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Expr::Seq(items)
        })
    }

    fn postfix(&mut self, mut item: Expr) -> Result<Expr, GbnfError> {
        loop {
            let (min, max) = match self.peek() {
                Some(b'?') => (0, Some(1)),
                Some(b'*') => (0, None),
                Some(b'+') => (1, None),
                Some(b'{') => {
                    self.pos += 1;
                    let (min, max) = self.braces()?;
                    item = Expr::Repeat {
                        expr: Box::new(item),
                        min,
                        max,
                    };
                    continue;
                }
                _ => return Ok(item),
            };
            self.pos += 1;
            item = Expr::Repeat {
                expr: Box::new(item),
                min,
                max,
            };
        }
    }

    fn number(&mut self) -> Result<u32, GbnfError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("expected a repetition count"))
    }

    fn braces(&mut self) -> Result<(u32, Option<u32>), GbnfError> {
        self.skip_ws(false);
        let min = self.number()?;
        self.skip_ws(false);
        let max = if self.peek() == Some(b',') {
            self.pos += 1;
            self.skip_ws(false);
            if self.peek() == Some(b'}') {
                None
            } else {
                Some(self.number()?)
            }
        } else {
            Some(min)
        };
        self.skip_ws(false);
        self.expect("}")?;
        if max.is_some_and(|m| m < min) {
            return Err(self.err("repetition max below min"));
        }
        Ok((min, max))
    }

    fn escaped_char(&mut self) -> Result<char, GbnfError> {
        let rest = std::str::from_utf8(&self.src[self.pos..]).map_err(|_| self.err("invalid utf-8"))?;
        let c = rest.chars().next().ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += c.len_utf8();
        if c != '\\' {
            return Ok(c);
        }
        let e = self.peek().ok_or_else(|| self.err("dangling escape"))?;
        self.pos += 1;
        Ok(match e {
            b'n' => '\n',
            b'r' => '\r',
            b't' => '\t',
            b'\\' => '\\',
            b'"' => '"',
            b'[' => '[',
            b']' => ']',
            b'-' => '-',
            b'^' => '^',
            b'x' => {
                let hex = self.src.get(self.pos..self.pos + 2).ok_or_else(|| self.err("short \\x escape"))?;
                self.pos += 2;
                let v = u8::from_str_radix(std::str::from_utf8(hex).unwrap_or(""), 16)
                    .map_err(|_| self.err("bad \\x escape"))?;
                char::from(v)
            }
            _ => return Err(self.err("unknown escape")),
        })
    }

    fn literal(&mut self) -> Result<Expr, GbnfError> {
        self.expect("\"")?;
        let mut chars = Vec::new();
        loop {
            match self.peek() {
                None | Some(b'\n') => return Err(self.err("unterminated string literal")),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                _ => chars.push(self.escaped_char()?),
            }
        }
        Ok(Expr::Literal(chars))
    }

    fn class(&mut self) -> Result<Expr, GbnfError> {
        self.expect("[")?;
        let negated = if self.peek() == Some(b'^') {
            self.pos += 1;
            true
        } else {
            false
        };
        let mut ranges = Vec::new();
        loop {
            match self.peek() {
                None | Some(b'\n') => return Err(self.err("unterminated character class")),
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    let lo = self.escaped_char()?;
                    let hi = if self.peek() == Some(b'-') && self.src.get(self.pos + 1) != Some(&b']') {
                        self.pos += 1;
                        self.escaped_char()?
                    } else {
                        lo
                    };
                    if hi < lo {
                        return Err(self.err("inverted class range"));
                    }
                    ranges.push((lo, hi));
                }
            }
        }
        if ranges.is_empty() {
            return Err(self.err("empty character class"));
        }
        Ok(Expr::Class { ranges, negated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn literals_classes_and_repeats() {
        let g = Grammar::parse("root ::= \"a\" [0-9]{2,3} (\"x\" | \"y\")* \"\\n\"?\n").unwrap();
        assert!(g.accepts("a12"));
        assert!(g.accepts("a123xyx\n"));
        assert!(!g.accepts("a1"));
        assert!(!g.accepts("a1234"));
        assert!(!g.accepts("a12z"));
        assert!(!g.accepts(""));
    }

    #[test]
    fn multiline_rules_and_comments() {
        let text = "# comment\nroot ::= item+ # trailing\nitem ::= \"ab\" |\n  \"c\"\n";
        let g = Grammar::parse(text).unwrap();
        assert!(g.accepts("abcab"));
        assert!(!g.accepts("abb"));
        assert_eq!(g.rule_names().collect::<Vec<_>>(), vec!["item", "root"]);
    }

    #[test]
    fn negated_class_and_hex_escape() {
        let g = Grammar::parse("root ::= [^\"]+ \"\\x21\"\n").unwrap();
        assert!(g.accepts("hello!"));
        assert!(!g.accepts("he\"llo!"));
    }

    #[test]
    fn parse_errors() {
        assert!(Grammar::parse("root ::= missing\n").is_err());
        assert!(Grammar::parse("other ::= \"a\"\n").is_err());
        assert!(Grammar::parse("root ::= \"a\n").is_err());
        assert!(Grammar::parse("root ::= [a-z]{3,1}\n").is_err());
    }

    #[test]
    fn samples_are_accepted() {
        let g = Grammar::parse("root ::= (\"0\" | [1-9] [0-9]*) (\".\" [0-9]{1,3})?\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let s = g.sample(&mut rng);
            assert!(g.accepts(&s), "{s:?}");
        }
    }
}
