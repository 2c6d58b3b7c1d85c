//! Compact text syntax for fragment formulas.
//!
//! ```text
//! formula   := term ('&' term)*
//! term      := ('F' | 'G') '[' number ',' (number | 'inf') ']' predicate
//! predicate := family '(' argument (';' param (',' param)*)? ')'
//! argument  := 'x' digit | 'x(' int ')' | 'e' digit digit | 'e(' int ',' int ')'
//! param     := name '=' value
//! value     := number | '(' value (',' value)* ')' | '[' value (',' value)* ']'
//! ```
//!
//! Families: `ball(c, r[, w])` and its alias `goal`, `comm(r)`, `poly(a, b)`.
//! A scalar center or weight is broadcast to the position dimension. Edge
//! arguments are normalized so the lower agent id comes first.

use super::formula::{Interval, StlFormula, StlTask, TaskOwner};
use super::predicate::Predicate;
use super::StlError;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    List(Vec<Value>),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> StlError {
        StlError::Parse { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), StlError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn ident(&mut self) -> Result<&'a str, StlError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a name"));
        }
        Ok(&self.src[start..self.pos])
    }

    fn number(&mut self) -> Result<f64, StlError> {
        self.skip_ws();
        if self.src[self.pos..].starts_with("inf") {
            self.pos += 3;
            return Ok(f64::INFINITY);
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')) {
            self.pos += 1;
        }
        self.src[start..self.pos].parse().map_err(|_| StlError::Parse { pos: start, msg: "expected a number".into() })
    }

    fn integer(&mut self) -> Result<usize, StlError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        self.src[start..self.pos].parse().map_err(|_| StlError::Parse { pos: start, msg: "expected an agent id".into() })
    }

    fn digit(&mut self) -> Result<usize, StlError> {
        match self.peek().and_then(|c| c.to_digit(10)) {
            Some(d) => {
                self.pos += 1;
                Ok(d as usize)
            }
            None => Err(self.err("expected a digit")),
        }
    }

    fn value(&mut self) -> Result<Value, StlError> {
        self.skip_ws();
        let close = match self.peek() {
            Some('(') => ')',
            Some('[') => ']',
            _ => return self.number().map(Value::Num),
        };
        self.pos += 1;
        let mut items = vec![self.value()?];
        while self.eat(',') {
            items.push(self.value()?);
        }
        self.expect(close)?;
        Ok(Value::List(items))
    }

    fn argument(&mut self) -> Result<(TaskOwner, bool), StlError> {
        self.skip_ws();
        let kind = self.peek();
        if !matches!(kind, Some('x' | 'e')) {
            return Err(self.err("expected an argument x<i> or e<ij>"));
        }
        self.pos += 1;
        let paren = self.peek() == Some('(');
        match kind {
            Some('x') => {
                let i = if paren {
                    self.pos += 1;
                    let i = self.integer()?;
                    self.expect(')')?;
                    i
                } else {
                    self.digit()?
                };
                Ok((TaskOwner::Independent(i), false))
            }
            Some('e') => {
                let (i, j) = if paren {
                    self.pos += 1;
                    let i = self.integer()?;
                    self.expect(',')?;
                    let j = self.integer()?;
                    self.expect(')')?;
                    (i, j)
                } else {
                    (self.digit()?, self.digit()?)
                };
                TaskOwner::edge(i, j)
            }
            _ => Err(self.err("expected an argument x<i> or e<ij>")),
        }
    }
}

fn vector(v: &Value, dim: usize, what: &str) -> Result<Vec<f64>, StlError> {
    match v {
        Value::Num(x) => Ok(vec![*x; dim]),
        Value::List(items) => {
            let out: Vec<f64> = items
                .iter()
                .map(|i| match i {
                    Value::Num(x) => Ok(*x),
                    Value::List(_) => Err(StlError::Parse { pos: 0, msg: format!("{what} must be a flat vector") }),
                })
                .collect::<Result<_, _>>()?;
            if out.len() != dim {
                return Err(StlError::Parse { pos: 0, msg: format!("{what} has length {}, expected {dim}", out.len()) });
            }
            Ok(out)
        }
    }
}

fn scalar(v: &Value, what: &str) -> Result<f64, StlError> {
    match v {
        Value::Num(x) => Ok(*x),
        Value::List(_) => Err(StlError::Parse { pos: 0, msg: format!("{what} must be a number") }),
    }
}

fn build_predicate(family: &str, params: &[(String, Value)], dim: usize) -> Result<Predicate, StlError> {
    let get = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| v);
    let require = |key: &str| get(key).ok_or_else(|| StlError::Parse { pos: 0, msg: format!("{family} needs '{key}'") });
    let allowed: &[&str] = match family {
        "ball" | "goal" => &["c", "r", "w"],
        "comm" => &["r"],
        "poly" => &["a", "b"],
        other => return Err(StlError::Unsupported(format!("unknown predicate family '{other}'"))),
    };
    if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(StlError::Parse { pos: 0, msg: format!("unknown parameter '{k}' for {family}") });
    }
    match family {
        "ball" | "goal" => {
            let center = vector(require("c")?, dim, "c")?;
            let radius = scalar(require("r")?, "r")?;
            let weights = match get("w") {
                Some(w) => vector(w, dim, "w")?,
                None => vec![1.0; dim],
            };
            Predicate::weighted_ball(center, radius, weights)
        }
        "comm" => Predicate::communication(dim, scalar(require("r")?, "r")?),
        _ => {
            let Value::List(rows) = require("a")? else {
                return Err(StlError::Parse { pos: 0, msg: "poly 'a' must be a list of rows".into() });
            };
            let rows = rows.iter().map(|r| vector(r, dim, "row of a")).collect::<Result<Vec<_>, _>>()?;
            let offsets = vector(require("b")?, rows.len(), "b")?;
            Predicate::polyhedral(rows, offsets)
        }
    }
}

/// Parses one task. `position_dim` sizes broadcast parameters.
pub fn parse_task(src: &str, position_dim: usize) -> Result<StlTask, StlError> {
    let mut cur = Cursor { src, pos: 0 };
    let mut owner: Option<TaskOwner> = None;
    let mut terms = Vec::new();
    loop {
        let op = cur.ident()?;
        let always = match op {
            "G" => true,
            "F" => false,
            other => return Err(StlError::Unsupported(format!("operator '{other}' is outside the supported fragment"))),
        };
        cur.expect('[')?;
        let a = cur.number()?;
        cur.expect(',')?;
        let b = cur.number()?;
        cur.expect(']')?;
        let interval = Interval::new(a, b)?;
        let family = cur.ident()?;
        if matches!(family, "F" | "G") {
            return Err(StlError::Unsupported("nested temporal operators are outside the supported fragment".into()));
        }
        cur.expect('(')?;
        let (this_owner, flipped) = cur.argument()?;
        let mut params = Vec::new();
        if cur.eat(';') {
            loop {
                let key = cur.ident()?.to_string();
                cur.expect('=')?;
                params.push((key, cur.value()?));
                if !cur.eat(',') {
                    break;
                }
            }
        }
        cur.expect(')')?;
        match owner {
            None => owner = Some(this_owner),
            Some(o) if o != this_owner => {
                return Err(StlError::Unsupported(format!("conjunction mixes arguments {o} and {this_owner}")))
            }
            _ => {}
        }
        let mut predicate = build_predicate(family, &params, position_dim)?;
        if flipped {
            predicate = predicate.mirrored();
        }
        terms.push(if always { StlFormula::Always(interval, predicate) } else { StlFormula::Eventually(interval, predicate) });
        if !cur.eat('&') {
            break;
        }
    }
    cur.skip_ws();
    if cur.pos != src.len() {
        return Err(cur.err("trailing input"));
    }
    let formula = if terms.len() == 1 { terms.pop().unwrap() } else { StlFormula::And(terms) };
    Ok(StlTask::new(owner.expect("at least one term parsed"), formula))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn formation_task() {
        let t = parse_task("F[30,40] ball(e12; c=0, r=5)", 2).unwrap();
        assert_eq!(t.owner, TaskOwner::Collaborative(1, 2));
        let terms = t.formula.terms().unwrap();
        assert_eq!(terms.len(), 1);
        assert!(!terms[0].always);
        assert_abs_diff_eq!(terms[0].predicate.value(&[3.0, 4.0]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reversed_edge_is_mirrored() {
        let t = parse_task("G[20,30] ball(e(3,1); c=(2.5,-2.5), r=2)", 2).unwrap();
        assert_eq!(t.owner, TaskOwner::Collaborative(1, 3));
        // p31 = (2.5, -2.5) means p13 = (-2.5, 2.5).
        let p = &t.formula.terms().unwrap()[0].predicate;
        assert_abs_diff_eq!(p.value(&[-2.5, 2.5]), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn conjunction_and_families() {
        let t = parse_task("G[0,inf] comm(e(10,12); r=8.5) & F[0,5] poly(e(10,12); a=[[1,0],[0,1]], b=(1,1))", 2).unwrap();
        assert_eq!(t.owner, TaskOwner::Collaborative(10, 12));
        let terms = t.formula.terms().unwrap();
        assert_eq!(terms.len(), 2);
        assert!(terms[0].interval.b.is_infinite());
        let g = parse_task("G[20,50] goal(x1; c=(15,0), r=3, w=(1,2))", 2).unwrap();
        assert_eq!(g.owner, TaskOwner::Independent(1));
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_task("U[0,1] ball(x1; c=0, r=1)", 2), Err(StlError::Unsupported(_))));
        assert!(matches!(parse_task("F[0,1] G[0,2] ball(x1; c=0, r=1)", 2), Err(StlError::Unsupported(_))));
        assert!(parse_task("F[0,1] ball(x1; c=0, r=1) & G[0,1] ball(x2; c=0, r=1)", 2).is_err());
        assert!(parse_task("F[0,1] ball(e11; c=0, r=1)", 2).is_err());
        assert!(parse_task("F[0,1] ball(x1; c=0)", 2).is_err());
        assert!(parse_task("F[0,1] ball(x1; c=0, r=1, q=2)", 2).is_err());
        assert!(parse_task("F[2,1] ball(x1; c=0, r=1)", 2).is_err());
        assert!(parse_task("F[0,1] ball(x1; c=0, r=1) junk", 2).is_err());
    }
}
