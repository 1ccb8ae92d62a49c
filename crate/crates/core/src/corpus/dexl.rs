//! `classes.dexl`: a line-oriented stand-in for Dalvik bytecode.
//!
//! ```text
//! DEXL1
//! M onCreate
//! C u android.net.Http.open
//! C g java.io.File.delete
//! S https://example.com/feed
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEXL_PATH: &str = "classes.dexl";
const MAGIC: &str = "DEXL1";
const FILE: &str = "classes.dexl";

/// Whether a call sits behind an opaque predicate. Guarded calls are
/// visible to static extraction but never execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Guard {
    Guarded,
    Unguarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Statement {
    Call { guard: Guard, callee: String },
    StringConst(String),
}

impl Statement {
    pub fn call(callee: impl Into<String>) -> Self {
        Statement::Call { guard: Guard::Unguarded, callee: callee.into() }
    }

    pub fn guarded_call(callee: impl Into<String>) -> Self {
        Statement::Call { guard: Guard::Guarded, callee: callee.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub body: Vec<Statement>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DexLiteProgram {
    methods: Vec<Method>,
}

/// Internal calls are spelled `self.<method>`.
pub fn internal_target(callee: &str) -> Option<&str> {
    callee.strip_prefix("self.")
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace())
}

fn valid_external(callee: &str) -> bool {
    valid_identifier(callee) && callee.split('.').count() >= 2 && callee.split('.').all(|seg| !seg.is_empty())
}

impl DexLiteProgram {
    pub fn new(methods: Vec<Method>) -> Result<Self> {
        let p = Self { methods };
        p.validate()?;
        Ok(p)
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Adds a method; its name must be new.
    pub fn push_method(&mut self, method: Method) -> Result<()> {
        self.methods.push(method);
        if let Err(e) = self.validate() {
            self.methods.pop();
            return Err(e);
        }
        Ok(())
    }

    pub fn calls(&self) -> impl Iterator<Item = (Guard, &str)> + '_ {
        self.methods.iter().flat_map(|m| {
            m.body.iter().filter_map(|s| match s {
                Statement::Call { guard, callee } => Some((*guard, callee.as_str())),
                Statement::StringConst(_) => None,
            })
        })
    }

    pub fn string_consts(&self) -> impl Iterator<Item = &str> + '_ {
        self.methods.iter().flat_map(|m| {
            m.body.iter().filter_map(|s| match s {
                Statement::StringConst(l) => Some(l.as_str()),
                Statement::Call { .. } => None,
            })
        })
    }

    fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for m in &self.methods {
            if !valid_identifier(&m.name) {
                return Err(Error::extraction(FILE, 0, format!("invalid method name `{}`", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(Error::extraction(FILE, 0, format!("duplicate method `{}`", m.name)));
            }
        }
        for m in &self.methods {
            for s in &m.body {
                match s {
                    Statement::Call { callee, .. } => match internal_target(callee) {
                        Some(target) if names.contains(target) => {}
                        Some(target) => {
                            return Err(Error::extraction(FILE, 0, format!("call to unknown method `self.{target}`")))
                        }
                        None if valid_external(callee) => {}
                        None => return Err(Error::extraction(FILE, 0, format!("invalid callee `{callee}`"))),
                    },
                    Statement::StringConst(lit) if lit.contains('\n') => {
                        return Err(Error::extraction(FILE, 0, "string literal contains a newline"))
                    }
                    Statement::StringConst(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MAGIC);
        out.push('\n');
        for m in &self.methods {
            let _ = writeln!(out, "M {}", m.name);
            for s in &m.body {
                match s {
                    Statement::Call { guard: Guard::Guarded, callee } => {
                        let _ = writeln!(out, "C g {callee}");
                    }
                    Statement::Call { guard: Guard::Unguarded, callee } => {
                        let _ = writeln!(out, "C u {callee}");
                    }
                    Statement::StringConst(lit) => {
                        let _ = writeln!(out, "S {lit}");
                    }
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(Error::extraction(FILE, 1, "missing DEXL1 header")),
        }
        let mut methods: Vec<Method> = Vec::new();
        let mut names = HashSet::new();
        let mut internal_refs = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("M ") {
                if !valid_identifier(name) {
                    return Err(Error::extraction(FILE, no, "invalid method name"));
                }
                if !names.insert(name.to_owned()) {
                    return Err(Error::extraction(FILE, no, format!("duplicate method `{name}`")));
                }
                methods.push(Method { name: name.to_owned(), body: Vec::new() });
                continue;
            }
            let Some(current) = methods.last_mut() else {
                return Err(Error::extraction(FILE, no, "statement outside of a method"));
            };
            let stmt = if let Some(lit) = line.strip_prefix("S ") {
                Statement::StringConst(lit.to_owned())
            } else if let Some(rest) = line.strip_prefix("C ") {
                let (guard, callee) = match rest.split_once(' ') {
                    Some(("g", c)) => (Guard::Guarded, c),
                    Some(("u", c)) => (Guard::Unguarded, c),
                    _ => return Err(Error::extraction(FILE, no, "call needs `g` or `u` guard marker")),
                };
                match internal_target(callee) {
                    Some(t) if valid_identifier(t) => internal_refs.push((no, t.to_owned())),
                    Some(_) => return Err(Error::extraction(FILE, no, "invalid internal callee")),
                    None if valid_external(callee) => {}
                    None => return Err(Error::extraction(FILE, no, format!("invalid callee `{callee}`"))),
                }
                Statement::Call { guard, callee: callee.to_owned() }
            } else {
                return Err(Error::extraction(FILE, no, format!("unrecognized line `{line}`")));
            };
            current.body.push(stmt);
        }
        if let Some((no, t)) = internal_refs.into_iter().find(|(_, t)| !names.contains(t)) {
            return Err(Error::extraction(FILE, no, format!("call to unknown method `self.{t}`")));
        }
        Ok(Self { methods })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_example() {
        let p = DexLiteProgram::parse("DEXL1\nM a\nC u x.Y.z\nC g p.Q.r\nS http://x.com\nC u self.a\n").unwrap();
        assert_eq!(p.methods().len(), 1);
        assert_eq!(p.methods()[0].body.len(), 4);
        assert_eq!(p.calls().filter(|(g, _)| *g == Guard::Guarded).count(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = DexLiteProgram::parse("DEXL1\nM a\nC x y.z\n").unwrap_err();
        assert!(matches!(err, Error::Extraction { line: 3, .. }), "{err}");
        let err = DexLiteProgram::parse("DEXL1\nC u a.b\n").unwrap_err();
        assert!(matches!(err, Error::Extraction { line: 2, .. }));
        let err = DexLiteProgram::parse("DEXL1\nM a\nC u single\n").unwrap_err();
        assert!(matches!(err, Error::Extraction { line: 3, .. }));
        let err = DexLiteProgram::parse("DEXL1\nM a\nC u self.nope\n").unwrap_err();
        assert!(matches!(err, Error::Extraction { line: 3, .. }));
        assert!(DexLiteProgram::parse("DEX\n").is_err());
        assert!(DexLiteProgram::parse("DEXL1\nM a\nM a\n").is_err());
    }

    fn arb_program() -> impl Strategy<Value = DexLiteProgram> {
        let stmt = prop_oneof![
            ("[a-z]{1,4}(\\.[A-Za-z]{1,4}){1,3}", any::<bool>()).prop_map(|(c, g)| {
                if g { Statement::guarded_call(c) } else { Statement::call(c) }
            }),
            "[ -~]{0,20}".prop_map(Statement::StringConst),
        ];
        proptest::collection::vec(proptest::collection::vec(stmt, 0..6), 0..5).prop_map(|bodies| {
            let n = bodies.len();
            let methods = bodies
                .into_iter()
                .enumerate()
                .map(|(i, mut body)| {
                    if i + 1 < n {
                        body.push(Statement::call(format!("self.m{}", i + 1)));
                    }
                    Method { name: format!("m{i}"), body }
                })
                .collect();
            DexLiteProgram::new(methods).unwrap()
        })
    }

    proptest! {
        #[test]
        fn text_round_trip(p in arb_program()) {
            prop_assert_eq!(DexLiteProgram::parse(&p.to_text()).unwrap(), p);
        }
    }
}
