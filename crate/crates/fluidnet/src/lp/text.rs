//! A plain-text format for linear programs, meant for inspecting generated
//! models and for feeding them back into the solver.
//!
//! ```text
//! min: 2 x + 3.5 y - z;
//!
//! supply: x + y <= 10;       /* capacity of the first machine */
//! demand: x - 0.5 z >= 1;
//! mix: y + z = 4;
//!
//! bounds:
//! x >= 0;
//! -1 <= y <= 4;
//! z = 2;
//! ```
//!
//! * The objective comes first (`min:`), then the rows, then a `bounds:`
//!   section with exactly one statement per column. The bounds section fixes
//!   the column order, so a parse of an exported problem reproduces the
//!   original column numbering.
//! * Every column must appear in the bounds section. `x >= lo;` leaves the
//!   upper bound infinite, `lo <= x <= hi;` closes it, and `x = v;` fixes the
//!   column. Lower bounds are always finite.
//! * A term is `coefficient name` with the coefficient optional (`x`, `- x`).
//!   A bare `0` stands for an empty expression.
//! * `/* ... */` comments are ignored, except directly after a row's
//!   semicolon on the same line, where the comment is kept as the row's note.
//! * Numbers are written with Rust's shortest-round-trip formatting, so
//!   export followed by parse reproduces every coefficient bit for bit.

use super::{LpError, LpProblem, Relation, Row};
use std::collections::HashMap;
use std::fmt::Write as _;

const RESERVED: [&str; 3] = ["min", "bounds", "free"];

fn is_valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    let ok_first = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_');
    ok_first
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !RESERVED.contains(&s)
}

/// Render a problem in the text format. Fails if a name is not a plain
/// identifier (or is one of the reserved words) or a note contains `*/`.
pub fn export(p: &LpProblem) -> Result<String, LpError> {
    for col in &p.columns {
        if !is_valid_name(&col.name) {
            return Err(LpError::Invalid(format!(
                "column name {:?} cannot be written in the text format",
                col.name
            )));
        }
    }
    for row in &p.rows {
        if !is_valid_name(&row.name) {
            return Err(LpError::Invalid(format!(
                "row name {:?} cannot be written in the text format",
                row.name
            )));
        }
        if let Some(note) = &row.note {
            if note.contains("*/") || note.contains('\n') {
                return Err(LpError::Invalid(format!(
                    "note on row {:?} cannot be written as a comment",
                    row.name
                )));
            }
        }
    }

    let mut out = String::new();
    out.push_str("min:");
    let obj_terms: Vec<(usize, f64)> = p
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.objective != 0.0)
        .map(|(j, c)| (j, c.objective))
        .collect();
    write_expr(&mut out, &obj_terms, p);
    out.push_str(";\n");

    if !p.rows.is_empty() {
        out.push('\n');
    }
    for row in &p.rows {
        let _ = write!(out, "{}:", row.name);
        write_expr(&mut out, &row.terms, p);
        let _ = write!(out, " {} {};", row.relation, row.rhs);
        if let Some(note) = &row.note {
            let _ = write!(out, " /* {note} */");
        }
        out.push('\n');
    }

    out.push_str("\nbounds:\n");
    for col in &p.columns {
        if col.upper.is_infinite() {
            let _ = writeln!(out, "{} >= {};", col.name, col.lower);
        } else if col.upper == col.lower {
            let _ = writeln!(out, "{} = {};", col.name, col.lower);
        } else {
            let _ = writeln!(out, "{} <= {} <= {};", col.lower, col.name, col.upper);
        }
    }
    Ok(out)
}

fn write_expr(out: &mut String, terms: &[(usize, f64)], p: &LpProblem) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (pos, &(j, coef)) in terms.iter().enumerate() {
        let negative = coef < 0.0;
        match (pos, negative) {
            (0, false) => out.push(' '),
            (0, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
            (_, true) => out.push_str(" - "),
        }
        let magnitude = coef.abs();
        if magnitude == 1.0 {
            out.push_str(&p.columns[j].name);
        } else {
            let _ = write!(out, "{} {}", magnitude, p.columns[j].name);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
    Comment(String),
}

struct Lexed {
    tok: Tok,
    line: usize,
}

fn lex(text: &str) -> Result<Vec<Lexed>, LpError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0usize;
    let mut line = 1usize;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            ':' | ';' | '+' | '-' => {
                let sym = match c {
                    ':' => ":",
                    ';' => ";",
                    '+' => "+",
                    _ => "-",
                };
                toks.push(Lexed {
                    tok: Tok::Sym(sym),
                    line,
                });
                i += 1;
            }
            '<' | '>' | '=' => {
                let (sym, len) = if c == '=' {
                    ("=", 1)
                } else if chars.get(i + 1) == Some(&'=') {
                    (if c == '<' { "<=" } else { ">=" }, 2)
                } else {
                    return Err(LpError::Parse {
                        line,
                        message: format!("expected `{c}=`"),
                    });
                };
                toks.push(Lexed {
                    tok: Tok::Sym(sym),
                    line,
                });
                i += len;
            }
            '/' => {
                if chars.get(i + 1) != Some(&'*') {
                    return Err(LpError::Parse {
                        line,
                        message: "stray `/` (comments are `/* ... */`)".to_string(),
                    });
                }
                let start_line = line;
                i += 2;
                let mut body = String::new();
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(LpError::Parse {
                                line: start_line,
                                message: "unterminated comment".to_string(),
                            });
                        }
                        Some('*') if chars.get(i + 1) == Some(&'/') => {
                            i += 2;
                            break;
                        }
                        Some(&ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            body.push(ch);
                            i += 1;
                        }
                    }
                }
                toks.push(Lexed {
                    tok: Tok::Comment(body.trim().to_string()),
                    line: start_line,
                });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let value = s.parse::<f64>().map_err(|_| LpError::Parse {
                    line,
                    message: format!("bad number `{s}`"),
                })?;
                toks.push(Lexed {
                    tok: Tok::Num(value),
                    line,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                toks.push(Lexed {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line,
                });
            }
            other => {
                return Err(LpError::Parse {
                    line,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, LpError> {
        let line = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map_or(0, |t| t.line);
        Err(LpError::Parse {
            line,
            message: message.into(),
        })
    }

    fn skip_comments(&mut self) {
        while matches!(self.toks.get(self.pos), Some(t) if matches!(t.tok, Tok::Comment(_))) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<&Tok> {
        self.skip_comments();
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        self.skip_comments();
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), LpError> {
        match self.next() {
            Some(Tok::Sym(s)) if s == sym => Ok(()),
            other => self.err(format!("expected `{sym}`, found {}", describe(&other))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, LpError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => self.err(format!("expected a name, found {}", describe(&other))),
        }
    }

    /// A number with an optional leading sign.
    fn signed_number(&mut self) -> Result<f64, LpError> {
        let sign = match self.peek() {
            Some(Tok::Sym("-")) => {
                self.next();
                -1.0
            }
            Some(Tok::Sym("+")) => {
                self.next();
                1.0
            }
            _ => 1.0,
        };
        match self.next() {
            Some(Tok::Num(v)) => Ok(sign * v),
            other => self.err(format!("expected a number, found {}", describe(&other))),
        }
    }

    /// Terms up to (not including) the next `;`, `<=`, `>=` or `=`.
    fn expr(&mut self) -> Result<Vec<(String, f64)>, LpError> {
        let mut terms = Vec::new();
        let mut first = true;
        loop {
            match self.peek() {
                Some(Tok::Sym(";" | "<=" | ">=" | "=")) | None => return Ok(terms),
                _ => {}
            }
            let sign = match self.peek() {
                Some(Tok::Sym("-")) => {
                    self.next();
                    -1.0
                }
                Some(Tok::Sym("+")) => {
                    self.next();
                    1.0
                }
                _ if first => 1.0,
                _ => return self.err("expected `+` or `-` between terms"),
            };
            first = false;
            match self.next() {
                Some(Tok::Num(v)) => match self.peek() {
                    Some(Tok::Ident(_)) => {
                        let Some(Tok::Ident(name)) = self.next() else {
                            unreachable!()
                        };
                        terms.push((name, sign * v));
                    }
                    _ if v == 0.0 => {}
                    _ => {
                        return self.err("constant terms other than 0 are not supported");
                    }
                },
                Some(Tok::Ident(name)) => terms.push((name, sign)),
                other => {
                    return self.err(format!(
                        "expected a term, found {}",
                        describe(&other)
                    ));
                }
            }
        }
    }

    /// A comment on the given line, immediately following the current
    /// position, is consumed and returned.
    fn trailing_comment(&mut self, line: usize) -> Option<String> {
        if let Some(t) = self.toks.get(self.pos) {
            if t.line == line {
                if let Tok::Comment(body) = &t.tok {
                    let body = body.clone();
                    self.pos += 1;
                    return Some(body);
                }
            }
        }
        None
    }

    fn current_line(&self) -> usize {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map_or(0, |t| t.line)
    }
}

fn describe(tok: &Option<Tok>) -> String {
    match tok {
        None => "end of input".to_string(),
        Some(Tok::Ident(s)) => format!("`{s}`"),
        Some(Tok::Num(v)) => format!("number `{v}`"),
        Some(Tok::Sym(s)) => format!("`{s}`"),
        Some(Tok::Comment(_)) => "a comment".to_string(),
    }
}

struct RawRow {
    name: String,
    terms: Vec<(String, f64)>,
    relation: Relation,
    rhs: f64,
    note: Option<String>,
    line: usize,
}

enum RawBound {
    Lower(String, f64),
    Range(f64, String, f64),
    Fixed(String, f64),
}

/// Parse the text format. The returned problem has passed
/// [`LpProblem::validate`].
pub fn parse(text: &str) -> Result<LpProblem, LpError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };

    match p.next() {
        Some(Tok::Ident(s)) if s == "min" => {}
        other => {
            return p.err(format!(
                "the file must start with `min:`, found {}",
                describe(&other)
            ));
        }
    }
    p.expect_sym(":")?;
    let objective = p.expr()?;
    let obj_line = p.current_line();
    p.expect_sym(";")?;

    let mut rows: Vec<RawRow> = Vec::new();
    loop {
        match p.peek() {
            Some(Tok::Ident(s)) if s == "bounds" => {
                p.next();
                p.expect_sym(":")?;
                break;
            }
            Some(Tok::Ident(_)) => {}
            other => {
                let msg = format!(
                    "expected a row or the `bounds:` section, found {}",
                    describe(&other.cloned())
                );
                return p.err(msg);
            }
        }
        let line = p.current_line();
        let name = p.expect_ident()?;
        p.expect_sym(":")?;
        let terms = p.expr()?;
        let relation = match p.next() {
            Some(Tok::Sym("<=")) => Relation::Le,
            Some(Tok::Sym(">=")) => Relation::Ge,
            Some(Tok::Sym("=")) => Relation::Eq,
            other => {
                return p.err(format!(
                    "expected `<=`, `>=` or `=`, found {}",
                    describe(&other)
                ));
            }
        };
        let rhs = p.signed_number()?;
        let end_line = p.current_line();
        p.expect_sym(";")?;
        let note = p.trailing_comment(end_line);
        rows.push(RawRow {
            name,
            terms,
            relation,
            rhs,
            note,
            line,
        });
    }

    let mut bounds: Vec<RawBound> = Vec::new();
    loop {
        match p.peek() {
            None => break,
            Some(Tok::Ident(_)) => {
                let name = p.expect_ident()?;
                match p.next() {
                    Some(Tok::Sym(">=")) => {
                        let lo = p.signed_number()?;
                        bounds.push(RawBound::Lower(name, lo));
                    }
                    Some(Tok::Sym("=")) => {
                        let v = p.signed_number()?;
                        bounds.push(RawBound::Fixed(name, v));
                    }
                    other => {
                        return p.err(format!(
                            "expected `>=` or `=` after the column name, found {}",
                            describe(&other)
                        ));
                    }
                }
                p.expect_sym(";")?;
            }
            Some(Tok::Num(_) | Tok::Sym("-" | "+")) => {
                let lo = p.signed_number()?;
                p.expect_sym("<=")?;
                let name = p.expect_ident()?;
                p.expect_sym("<=")?;
                let hi = p.signed_number()?;
                p.expect_sym(";")?;
                bounds.push(RawBound::Range(lo, name, hi));
            }
            other => {
                let msg = format!(
                    "expected a bound statement, found {}",
                    describe(&other.cloned())
                );
                return p.err(msg);
            }
        }
    }

    let mut problem = LpProblem::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for bound in bounds {
        let (name, lower, upper) = match bound {
            RawBound::Lower(name, lo) => (name, lo, f64::INFINITY),
            RawBound::Range(lo, name, hi) => (name, lo, hi),
            RawBound::Fixed(name, v) => (name, v, v),
        };
        if index.contains_key(&name) {
            return Err(LpError::Parse {
                line: 0,
                message: format!("column `{name}` bounded twice"),
            });
        }
        let j = problem.add_column(name.clone(), lower, upper, 0.0);
        index.insert(name, j);
    }

    for (name, coef) in objective {
        let Some(&j) = index.get(&name) else {
            return Err(LpError::Parse {
                line: obj_line,
                message: format!("objective references `{name}`, which has no bounds entry"),
            });
        };
        problem.columns[j].objective += coef;
    }

    for raw in rows {
        let mut terms = Vec::with_capacity(raw.terms.len());
        for (name, coef) in raw.terms {
            let Some(&j) = index.get(&name) else {
                return Err(LpError::Parse {
                    line: raw.line,
                    message: format!(
                        "row `{}` references `{name}`, which has no bounds entry",
                        raw.name
                    ),
                });
            };
            terms.push((j, coef));
        }
        problem.rows.push(Row {
            name: raw.name,
            note: raw.note,
            terms,
            relation: raw.relation,
            rhs: raw.rhs,
        });
    }

    problem.validate()?;
    Ok(problem)
}
