//! Prefix text form: `(pow (sub (var z 0) (const 1)) 2)`.

use std::fmt;

use super::{Expr, Node};
use crate::{Error, Result};

pub(super) fn write_sexpr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e.node() {
        Node::Const(c) => write!(f, "(const {c:?})"),
        Node::Var(v) => write!(f, "(var {} {})", v.name, v.index),
        Node::Sum(xs) | Node::Product(xs) => {
            let op = if matches!(e.node(), Node::Sum(_)) { "add" } else { "mul" };
            write!(f, "({op}")?;
            for x in xs {
                write!(f, " ")?;
                write_sexpr(x, f)?;
            }
            write!(f, ")")
        }
        Node::Pow(x, n) => {
            write!(f, "(pow ")?;
            write_sexpr(x, f)?;
            write!(f, " {n})")
        }
        Node::Exp(x) => {
            write!(f, "(exp ")?;
            write_sexpr(x, f)?;
            write!(f, ")")
        }
        Node::Neg(x) => {
            write!(f, "(neg ")?;
            write_sexpr(x, f)?;
            write!(f, ")")
        }
    }
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(s: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Tok::Open);
                i += 1;
            }
            b')' => {
                out.push(Tok::Close);
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                    i += 1;
                }
                out.push(Tok::Atom(&s[start..i]));
            }
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn next(&mut self) -> Result<&Tok<'a>> {
        let t = self.toks.get(self.pos).ok_or_else(|| Error::Parse("unexpected end of input".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn atom(&mut self) -> Result<&'a str> {
        match self.next()? {
            Tok::Atom(a) => Ok(a),
            t => Err(Error::Parse(format!("expected atom, found {t:?}"))),
        }
    }

    fn close(&mut self) -> Result<()> {
        match self.next()? {
            Tok::Close => Ok(()),
            t => Err(Error::Parse(format!("expected ')', found {t:?}"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T> {
        let a = self.atom()?;
        a.parse().map_err(|_| Error::Parse(format!("bad number {a:?}")))
    }

    fn expr(&mut self) -> Result<Expr> {
        match self.next()? {
            Tok::Atom(a) => {
                let a = *a;
                a.parse::<f64>().map(Expr::constant).map_err(|_| Error::Parse(format!("bad atom {a:?}")))
            }
            Tok::Close => Err(Error::Parse("unexpected ')'".into())),
            Tok::Open => {
                let head = self.atom()?;
                let e = match head {
                    "const" => Expr::constant(self.number()?),
                    "var" => {
                        let name = self.atom()?;
                        Expr::var(name, self.number()?)
                    }
                    "add" | "mul" => {
                        let mut xs = Vec::new();
                        while self.toks.get(self.pos) != Some(&Tok::Close) {
                            xs.push(self.expr()?);
                        }
                        if head == "add" {
                            Expr::sum(xs)
                        } else {
                            Expr::product(xs)
                        }
                    }
                    "sub" => {
                        let a = self.expr()?;
                        let b = self.expr()?;
                        a - b
                    }
                    "pow" => {
                        let b = self.expr()?;
                        b.pow(self.number()?)
                    }
                    "exp" => self.expr()?.exp(),
                    "neg" => -self.expr()?,
                    other => return Err(Error::Parse(format!("unknown operator {other:?}"))),
                };
                self.close()?;
                Ok(e)
            }
        }
    }
}

pub fn parse(s: &str) -> Result<Expr> {
    let mut p = Parser { toks: tokenize(s), pos: 0 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(Error::Parse("trailing input".into()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, VarRef};
    use std::collections::HashMap;

    #[test]
    fn parse_and_print() {
        let e = parse("(pow (sub (var z 0) (const 1)) 2)").unwrap();
        let p = HashMap::from([(VarRef::new("z", 0), 3.0)]);
        assert_eq!(evaluate(&e, &p).unwrap(), 4.0);
        let back = parse(&e.to_string()).unwrap();
        assert_eq!(evaluate(&back, &p).unwrap(), 4.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("(pow (var z 0)").is_err());
        assert!(parse("(frob 1)").is_err());
        assert!(parse("(var z 0) extra").is_err());
        assert!(parse("(pow (var z 0) -1)").is_err());
    }

    #[test]
    fn constants_round_trip_exactly() {
        let c = 0.1 + 0.2;
        let e = Expr::constant(c) * Expr::var("x", 0);
        let back = parse(&e.to_string()).unwrap();
        let p = HashMap::from([(VarRef::new("x", 0), 1.0)]);
        assert_eq!(evaluate(&back, &p).unwrap(), c);
    }
}
