//! Concrete syntax for the analysis language.
//!
//! ```text
//! program dialog_1
//! var focus;
//! call newA();
//! call setTitle(1);
//! if (focus == 1) { call setItems(); } else if (focus == 2) { call setItems(); }
//! call show();
//! #accept show
//! ```
//!
//! Statements: `var x, y;`, `x := e;`, `call m(args);`, `assume(c);`,
//! `if/else if/else`, `while (c) {..}`, `choose {..} or {..}` and the
//! `#accept [label]` annotation. Semicolons are optional. `//` starts a
//! comment.

use std::collections::HashSet;

use super::ast::{BinOp, Expr, Stmt};
use super::SymexecError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Accept,
    Assign,
    Semi,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Plus,
    Minus,
    EqEq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Newline,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, SymexecError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line: li + 1, col });
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '/' && chars.get(i + 1) == Some(&'/') {
                break;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let n = s.parse().map_err(|_| SymexecError::Syntax {
                    line: li + 1,
                    col,
                    message: format!("integer literal `{s}` out of range"),
                })?;
                push(&mut out, Tok::Int(n));
                continue;
            }
            if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '.' | '$')) {
                    i += 1;
                }
                push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
                continue;
            }
            if c == '#' {
                let start = i + 1;
                i += 1;
                while i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if word != "accept" {
                    return Err(SymexecError::Syntax {
                        line: li + 1,
                        col,
                        message: format!("unknown annotation `#{word}`"),
                    });
                }
                push(&mut out, Tok::Accept);
                continue;
            }
            let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let (tok, len) = match two.as_str() {
                ":=" => (Tok::Assign, 2),
                "==" => (Tok::EqEq, 2),
                "!=" => (Tok::Ne, 2),
                "<=" => (Tok::Le, 2),
                ">=" => (Tok::Ge, 2),
                "&&" => (Tok::AndAnd, 2),
                "||" => (Tok::OrOr, 2),
                _ => match c {
                    ';' => (Tok::Semi, 1),
                    ',' => (Tok::Comma, 1),
                    '(' => (Tok::LParen, 1),
                    ')' => (Tok::RParen, 1),
                    '{' => (Tok::LBrace, 1),
                    '}' => (Tok::RBrace, 1),
                    '+' => (Tok::Plus, 1),
                    '-' => (Tok::Minus, 1),
                    '<' => (Tok::Lt, 1),
                    '>' => (Tok::Gt, 1),
                    '!' => (Tok::Bang, 1),
                    _ => {
                        return Err(SymexecError::Syntax {
                            line: li + 1,
                            col,
                            message: format!("unexpected character `{c}`"),
                        })
                    }
                },
            };
            push(&mut out, tok);
            i += len;
        }
        out.push(Spanned { tok: Tok::Newline, line: li + 1, col: chars.len() + 1 });
    }
    Ok(out)
}

/// Parsed source: optional header name and the statement list.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceProgram {
    pub name: Option<String>,
    pub body: Vec<Stmt>,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    scope: HashSet<String>,
}

const KEYWORDS: [&str; 11] = ["program", "var", "call", "assume", "if", "else", "while", "choose", "or", "true", "false"];

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks[self.pos..].iter().map(|s| &s.tok).find(|t| **t != Tok::Newline)
    }

    fn skip_newlines(&mut self) {
        while self.pos < self.toks.len() && self.toks[self.pos].tok == Tok::Newline {
            self.pos += 1;
        }
    }

    fn here(&self) -> (usize, usize) {
        let mut p = self.pos;
        while p < self.toks.len() && self.toks[p].tok == Tok::Newline {
            p += 1;
        }
        match self.toks.get(p).or_else(|| self.toks.last()) {
            Some(s) => (s.line, s.col),
            None => (1, 1),
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, SymexecError> {
        let (line, col) = self.here();
        Err(SymexecError::Syntax { line, col, message: message.into() })
    }

    fn next(&mut self) -> Option<Tok> {
        self.skip_newlines();
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), SymexecError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.next();
                Ok(())
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.next();
            true
        } else {
            false
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn ident(&mut self, what: &str) -> Result<String, SymexecError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn program(&mut self) -> Result<SourceProgram, SymexecError> {
        let mut name = None;
        if self.is_keyword("program") {
            self.next();
            name = Some(self.ident("program name")?);
            // header occupies its own line
            if self.toks.get(self.pos).map(|s| &s.tok) != Some(&Tok::Newline) && self.peek().is_some() {
                return self.err("expected end of line after program header");
            }
        }
        let body = self.stmts()?;
        if self.peek().is_some() {
            return self.err("unexpected token");
        }
        Ok(SourceProgram { name, body })
    }

    fn stmts(&mut self) -> Result<Vec<Stmt>, SymexecError> {
        let mut out = Vec::new();
        while let Some(t) = self.peek() {
            if *t == Tok::RBrace {
                break;
            }
            if *t == Tok::Semi {
                self.next();
                continue;
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, SymexecError> {
        self.expect(Tok::LBrace, "`{`")?;
        let body = self.stmts()?;
        self.expect(Tok::RBrace, "`}`")?;
        Ok(body)
    }

    fn paren_expr(&mut self) -> Result<Expr, SymexecError> {
        self.expect(Tok::LParen, "`(`")?;
        let e = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(e)
    }

    fn stmt(&mut self) -> Result<Stmt, SymexecError> {
        if self.eat(&Tok::Accept) {
            // optional label on the same line
            let label = match self.toks.get(self.pos).map(|s| &s.tok) {
                Some(Tok::Ident(s)) => {
                    let s = s.clone();
                    self.pos += 1;
                    Some(s)
                }
                _ => None,
            };
            return Ok(Stmt::Accept(label));
        }
        let kw = match self.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return self.err("expected a statement"),
        };
        let stmt = match kw.as_str() {
            "var" => {
                self.next();
                let mut names = Vec::new();
                loop {
                    let v = self.ident("variable name")?;
                    self.scope.insert(v.clone());
                    names.push(v);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                Stmt::Declare(names)
            }
            "call" => {
                self.next();
                let name = self.ident("method name")?;
                self.expect(Tok::LParen, "`(`")?;
                let mut args = Vec::new();
                if !self.eat(&Tok::RParen) {
                    loop {
                        args.push(self.expr()?);
                        if self.eat(&Tok::RParen) {
                            break;
                        }
                        self.expect(Tok::Comma, "`,` or `)`")?;
                    }
                }
                Stmt::Call(name, args)
            }
            "assume" => {
                self.next();
                Stmt::Assume(self.paren_expr()?)
            }
            "if" => {
                let mut arms = Vec::new();
                let mut otherwise = Vec::new();
                self.next();
                let c = self.paren_expr()?;
                arms.push((c, self.block()?));
                while self.is_keyword("else") {
                    self.next();
                    if self.is_keyword("if") {
                        self.next();
                        let c = self.paren_expr()?;
                        arms.push((c, self.block()?));
                    } else {
                        otherwise = self.block()?;
                        break;
                    }
                }
                return Ok(Stmt::If { arms, otherwise });
            }
            "while" => {
                self.next();
                let c = self.paren_expr()?;
                return Ok(Stmt::While(c, self.block()?));
            }
            "choose" => {
                self.next();
                let mut blocks = vec![self.block()?];
                while self.is_keyword("or") {
                    self.next();
                    blocks.push(self.block()?);
                }
                return Ok(Stmt::Choose(blocks));
            }
            _ => {
                let v = self.ident("a statement")?;
                self.expect(Tok::Assign, "`:=`")?;
                let e = self.expr()?;
                self.scope.insert(v.clone());
                Stmt::Assign(v, e)
            }
        };
        self.eat(&Tok::Semi);
        Ok(stmt)
    }

    fn expr(&mut self) -> Result<Expr, SymexecError> {
        let mut lhs = self.conj()?;
        while self.eat(&Tok::OrOr) {
            let rhs = self.conj()?;
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Expr, SymexecError> {
        let mut lhs = self.negation()?;
        while self.eat(&Tok::AndAnd) {
            let rhs = self.negation()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn negation(&mut self) -> Result<Expr, SymexecError> {
        if self.eat(&Tok::Bang) {
            return Ok(Expr::not(self.negation()?));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, SymexecError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Some(Tok::EqEq) => BinOp::Eq,
            Some(Tok::Ne) => BinOp::Ne,
            Some(Tok::Lt) => BinOp::Lt,
            Some(Tok::Le) => BinOp::Le,
            Some(Tok::Gt) => BinOp::Gt,
            Some(Tok::Ge) => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.next();
        let rhs = self.additive()?;
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn additive(&mut self) -> Result<Expr, SymexecError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, SymexecError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SymexecError> {
        let (line, col) = self.here();
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.next();
                Ok(Expr::Int(n))
            }
            Some(Tok::LParen) => self.paren_expr(),
            Some(Tok::Ident(s)) if s == "true" || s == "false" => {
                self.next();
                Ok(Expr::Bool(s == "true"))
            }
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                if !self.scope.contains(&s) {
                    return Err(SymexecError::UndeclaredVariable { name: s, line, col });
                }
                Ok(Expr::Var(s))
            }
            _ => self.err("expected an expression"),
        }
    }
}

/// Parses program text into its header name and statements.
pub fn parse_source(text: &str) -> Result<SourceProgram, SymexecError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, scope: HashSet::new() };
    p.program()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_statements() {
        let p = parse_source("program demo\nvar a;\nx := a + 1;\ncall b.show(x)\n#accept end\n").unwrap();
        assert_eq!(p.name.as_deref(), Some("demo"));
        assert_eq!(p.body.len(), 4);
        assert_eq!(p.body[0], Stmt::Declare(vec!["a".into()]));
        assert!(matches!(&p.body[2], Stmt::Call(m, args) if m == "b.show" && args.len() == 1));
        assert_eq!(p.body[3], Stmt::Accept(Some("end".into())));
    }

    #[test]
    fn else_if_chain_is_one_statement() {
        let p = parse_source("var f; if (f == 1) { call a() } else if (f == 2) { call b() } else { call c() }").unwrap();
        match &p.body[1] {
            Stmt::If { arms, otherwise } => {
                assert_eq!(arms.len(), 2);
                assert_eq!(otherwise.len(), 1);
            }
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn precedence_binds_comparison_tighter_than_and() {
        let p = parse_source("var x; assume(x > 0 && x < 0 || !true)").unwrap();
        let Stmt::Assume(e) = &p.body[1] else { panic!() };
        assert_eq!(e.to_string(), "(((x > 0) && (x < 0)) || !(true))");
    }

    #[test]
    fn undeclared_variable_is_rejected_with_position() {
        let err = parse_source("call f()\nx := y + 1").unwrap_err();
        assert_eq!(err, SymexecError::UndeclaredVariable { name: "y".into(), line: 2, col: 6 });
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        match parse_source("call f(\n").unwrap_err() {
            SymexecError::Syntax { line, .. } => assert_eq!(line, 1),
            e => panic!("{e:?}"),
        }
        match parse_source("x := 1;\n  @").unwrap_err() {
            SymexecError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 3)),
            e => panic!("{e:?}"),
        }
        assert!(matches!(parse_source("#bogus"), Err(SymexecError::Syntax { .. })));
        assert!(matches!(parse_source("if (true) call a()"), Err(SymexecError::Syntax { .. })));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let p = parse_source("// header comment\n\ncall a(); // trailing\n").unwrap();
        assert_eq!(p.body, vec![Stmt::Call("a".into(), vec![])]);
    }
}
