//! Recursive-descent parser for a small Java-like function language:
//!
//! ```text
//! function := type name '(' [type name {',' type name}] ')' block
//! block    := '{' stmt* '}'
//! stmt     := type name ['=' expr] ';'          (decl)
//!           | name '=' expr ';'                 (assign)
//!           | call ';'
//!           | 'if' '(' expr ')' block ['else' block]
//!           | 'while' '(' expr ')' block
//!           | 'return' [expr] ';'
//! expr     := sum [('<'|'>'|'<='|'>='|'=='|'!=') sum]
//! sum      := term {('+'|'-') term}
//! term     := unary {('*'|'/') unary}
//! unary    := '-' unary | atom
//! atom     := int | name | call | '(' expr ')'
//! call     := name '(' [expr {',' expr}] ')'
//! name     := ident {'.' ident}
//! ```

use super::AstNode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: &[&str] = &[
    "<=", ">=", "==", "!=", "(", ")", "{", "}", ";", ",", "=", "+", "-", "*", "/", "<", ">", ".",
];

fn lex(src: &str) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_alphabetic() || c == '_' {
            let s: String = chars[i..]
                .iter()
                .take_while(|c| c.is_alphanumeric() || **c == '_')
                .collect();
            i += s.chars().count();
            col += s.chars().count();
            out.push(Spanned {
                tok: Tok::Ident(s),
                line,
                column: start_col,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let s: String = chars[i..]
                .iter()
                .take_while(|c| c.is_ascii_digit())
                .collect();
            i += s.len();
            col += s.len();
            out.push(Spanned {
                tok: Tok::Int(s),
                line,
                column: start_col,
            });
            continue;
        }
        let sym = SYMBOLS.iter().find(|s| {
            s.chars()
                .enumerate()
                .all(|(k, sc)| chars.get(i + k) == Some(&sc))
        });
        match sym {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Spanned {
                    tok: Tok::Sym(s),
                    line,
                    column: start_col,
                });
            }
            None => {
                return Err(Error::Syntax {
                    line,
                    column: col,
                    message: format!("unexpected character {c:?}"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|s| &s.tok)
    }

    fn error(&self, message: impl Into<String>) -> Error {
        let (line, column) = self
            .toks
            .get(self.pos)
            .map_or(self.eof, |s| (s.line, s.column));
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{s}'")))
        }
    }

    fn is_keyword(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == k)
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn name(&mut self) -> Result<String> {
        let mut s = self.ident()?;
        while self.is_sym(".") {
            self.pos += 1;
            s.push('.');
            s.push_str(&self.ident()?);
        }
        Ok(s)
    }

    fn function(&mut self) -> Result<AstNode> {
        let ret = self.ident()?;
        let name = self.ident()?;
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.is_sym(")") {
            loop {
                let ty = self.ident()?;
                let pname = self.ident()?;
                params.push(AstNode::node(
                    "param",
                    vec![AstNode::leaf(ty), AstNode::leaf(pname)],
                ));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        let body = self.block("body")?;
        if self.pos < self.toks.len() {
            return Err(self.error("trailing input after function"));
        }
        Ok(AstNode::node(
            "function",
            vec![
                AstNode::node("type", vec![AstNode::leaf(ret)]),
                AstNode::node("name", vec![AstNode::leaf(name)]),
                AstNode::node("params", params),
                body,
            ],
        ))
    }

    fn block(&mut self, label: &str) -> Result<AstNode> {
        self.expect_sym("{")?;
        let mut stmts = Vec::new();
        while !self.is_sym("}") {
            if self.peek().is_none() {
                return Err(self.error("unterminated block: expected '}'"));
            }
            stmts.push(self.statement()?);
        }
        self.pos += 1;
        Ok(AstNode::node(label, stmts))
    }

    fn statement(&mut self) -> Result<AstNode> {
        if self.is_keyword("return") {
            self.pos += 1;
            let mut kids = Vec::new();
            if !self.is_sym(";") {
                kids.push(self.expr()?);
            }
            self.expect_sym(";")?;
            return Ok(AstNode::node("return", kids));
        }
        if self.is_keyword("if") {
            self.pos += 1;
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let mut kids = vec![cond, self.block("then")?];
            if self.is_keyword("else") {
                self.pos += 1;
                kids.push(self.block("else")?);
            }
            return Ok(AstNode::node("if", kids));
        }
        if self.is_keyword("while") {
            self.pos += 1;
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let body = self.block("body")?;
            return Ok(AstNode::node("while", vec![cond, body]));
        }
        if let (Some(Tok::Ident(_)), Some(Tok::Ident(_))) = (self.peek(), self.peek_at(1)) {
            let ty = self.ident()?;
            let name = self.ident()?;
            let mut kids = vec![AstNode::leaf(ty), AstNode::leaf(name)];
            if self.eat_sym("=") {
                kids.push(self.expr()?);
            }
            self.expect_sym(";")?;
            return Ok(AstNode::node("decl", kids));
        }
        let name = self.name()?;
        if self.eat_sym("=") {
            let value = self.expr()?;
            self.expect_sym(";")?;
            return Ok(AstNode::node("assign", vec![AstNode::leaf(name), value]));
        }
        if self.is_sym("(") {
            let call = self.call_args(name)?;
            self.expect_sym(";")?;
            return Ok(call);
        }
        Err(self.error("expected '=' or '(' after name"))
    }

    fn call_args(&mut self, name: String) -> Result<AstNode> {
        self.expect_sym("(")?;
        let mut kids = vec![AstNode::leaf(name)];
        if !self.is_sym(")") {
            loop {
                kids.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        Ok(AstNode::node("call", kids))
    }

    fn expr(&mut self) -> Result<AstNode> {
        let lhs = self.sum()?;
        for op in ["<=", ">=", "==", "!=", "<", ">"] {
            if self.eat_sym(op) {
                let rhs = self.sum()?;
                return Ok(AstNode::node(op, vec![lhs, rhs]));
            }
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<AstNode> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_sym("+") {
                "+"
            } else if self.eat_sym("-") {
                "-"
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = AstNode::node(op, vec![lhs, rhs]);
        }
    }

    fn term(&mut self) -> Result<AstNode> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_sym("*") {
                "*"
            } else if self.eat_sym("/") {
                "/"
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = AstNode::node(op, vec![lhs, rhs]);
        }
    }

    fn unary(&mut self) -> Result<AstNode> {
        if self.eat_sym("-") {
            return Ok(AstNode::node("neg", vec![self.unary()?]));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<AstNode> {
        match self.peek().cloned() {
            Some(Tok::Int(s)) => {
                self.pos += 1;
                Ok(AstNode::leaf(s))
            }
            Some(Tok::Ident(_)) => {
                let name = self.name()?;
                if self.is_sym("(") {
                    self.call_args(name)
                } else {
                    Ok(AstNode::leaf(name))
                }
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Err(self.error("expected expression")),
        }
    }
}

/// Parses one function of the mini-grammar into an AST rooted at `function`.
pub fn parse_mini_function(source: &str) -> Result<AstNode> {
    let toks = lex(source)?;
    let lines: Vec<&str> = source.split('\n').collect();
    let eof = (
        lines.len(),
        lines.last().map_or(0, |l| l.chars().count()) + 1,
    );
    Parser { toks, pos: 0, eof }.function()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astkit::{render_sexpr, sbt_flatten};

    #[test]
    fn return_literal() {
        let t = parse_mini_function("int f(){return 1;}").unwrap();
        assert_eq!(t.label, "function");
        assert_eq!(
            render_sexpr(&t),
            "(function (type (int)) (name (f)) (params) (body (return (1))))"
        );
    }

    #[test]
    fn assignment_of_sum() {
        let t = parse_mini_function("int f(){x = a + b;}").unwrap();
        let body = &t.children[3];
        assert_eq!(render_sexpr(&body.children[0]), "(assign (x) (+ (a) (b)))");
    }

    #[test]
    fn full_grammar() {
        let src = "void run(int n, String s) {\n  int i = 0;\n  while (i < n) {\n    log.info(s, i * 2);\n    i = i + 1;\n  }\n  if (n == 0) { return; } else { reset(); }\n}";
        let t = parse_mini_function(src).unwrap();
        let sbt = sbt_flatten(&t);
        assert!(sbt.contains(&"while".to_string()));
        assert!(sbt.contains(&"log.info".to_string()));
        assert_eq!(
            render_sexpr(&t.children[2]),
            "(params (param (int) (n)) (param (String) (s)))"
        );
    }

    #[test]
    fn precedence() {
        let t = parse_mini_function("int f(){return a - b * (c + 2);}").unwrap();
        assert_eq!(
            render_sexpr(&t.children[3].children[0]),
            "(return (- (a) (* (b) (+ (c) (2)))))"
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_mini_function("int f(){") {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 9)),
            other => panic!("{other:?}"),
        }
        match parse_mini_function("int f() {\n  x = ;\n}") {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 7)),
            other => panic!("{other:?}"),
        }
        assert!(parse_mini_function("int f() { x = 1 }").is_err());
        assert!(parse_mini_function("int f() { # }").is_err());
    }
}
