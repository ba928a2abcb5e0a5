//! Math extraction from Wikitext/LaTeX and formula tokenization.
//!
//! Tokenization follows the annotation guidelines: identifiers are single
//! Latin letters or Greek letter commands, everything under `^`/`_` is an
//! index and never yields identifiers, derivative marks are kept but ignored.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{DocFormat, RawDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Display {
    Block,
    Inline,
}

/// One math region of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MathSegment {
    pub segment_id: usize,
    pub raw_latex: String,
    /// Whole region including tags or delimiters.
    pub span: (usize, usize),
    /// Range of `raw_latex` inside the body.
    pub content_span: (usize, usize),
    pub display: Display,
    pub existing_qid: Option<String>,
    /// Byte range of the opening `<math …>` tag (Wikitext only).
    pub open_tag: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractionIssue {
    UnbalancedDelimiter { start: usize, end: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub segments: Vec<MathSegment>,
    pub issues: Vec<ExtractionIssue>,
}

pub fn extract_math_segments(doc: &RawDocument) -> Extraction {
    match doc.format {
        DocFormat::Wikitext => extract_wikitext(&doc.body),
        DocFormat::Latex => extract_latex(&doc.body),
    }
}

fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

struct OpenTag {
    end: usize,
    self_closing: bool,
    attrs: Vec<(String, String)>,
}

/// Parses `<math …>` starting at `start` (which points at `<`).
fn parse_open_tag(body: &str, start: usize) -> Option<OpenTag> {
    let bytes = body.as_bytes();
    let mut i = start + "<math".len();
    match bytes.get(i) {
        Some(b'>') | Some(b'/') => {}
        Some(c) if c.is_ascii_whitespace() => {}
        _ => return None,
    }
    let mut attrs = Vec::new();
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        match bytes.get(i)? {
            b'>' => {
                return Some(OpenTag {
                    end: i + 1,
                    self_closing: false,
                    attrs,
                })
            }
            b'/' if bytes.get(i + 1) == Some(&b'>') => {
                return Some(OpenTag {
                    end: i + 2,
                    self_closing: true,
                    attrs,
                })
            }
            b'<' => return None,
            _ => {}
        }
        let name_start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'=' | b'>' | b'/' | b'<') {
            i += 1;
        }
        let name = body[name_start..i].to_ascii_lowercase();
        if name.is_empty() {
            // stray `/` inside the tag
            i += 1;
            continue;
        }
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if bytes.get(i) == Some(&b'=') {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            match bytes.get(i)? {
                q @ (b'"' | b'\'') => {
                    let close = body[i + 1..].find(*q as char)? + i + 1;
                    value = body[i + 1..close].to_string();
                    i = close + 1;
                }
                _ => {
                    let v_start = i;
                    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                        if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'>') {
                            break;
                        }
                        i += 1;
                    }
                    value = body[v_start..i].to_string();
                }
            }
        }
        attrs.push((name, value));
    }
}

fn extract_wikitext(body: &str) -> Extraction {
    let mut out = Extraction::default();
    let mut pos = 0;
    while pos < body.len() {
        let next_math = find_ci(body, "<math", pos);
        let next_comment = body[pos..].find("<!--").map(|i| i + pos);
        let start = match (next_math, next_comment) {
            (Some(m), Some(c)) if c < m => {
                pos = body[c + 4..].find("-->").map(|i| c + 4 + i + 3).unwrap_or(body.len());
                continue;
            }
            (Some(m), _) => m,
            (None, _) => break,
        };
        let Some(tag) = parse_open_tag(body, start) else {
            pos = start + 1;
            continue;
        };
        if tag.self_closing {
            pos = tag.end;
            continue;
        }
        // a new opening tag before the close means this one was never closed
        let close = find_ci(body, "</math>", tag.end).filter(|&c| {
            find_ci(body, "<math", tag.end)
                .filter(|&o| o < c && parse_open_tag(body, o).is_some())
                .is_none()
        });
        let Some(close) = close else {
            out.issues.push(ExtractionIssue::UnbalancedDelimiter {
                start,
                end: tag.end,
            });
            pos = tag.end;
            continue;
        };
        let end = close + "</math>".len();
        let mut display = Display::Inline;
        let mut existing_qid = None;
        for (name, value) in &tag.attrs {
            match name.as_str() {
                "display" if value.eq_ignore_ascii_case("block") => display = Display::Block,
                "qid" => existing_qid = Some(value.clone()),
                _ => {}
            }
        }
        out.segments.push(MathSegment {
            segment_id: out.segments.len(),
            raw_latex: body[tag.end..close].to_string(),
            span: (start, end),
            content_span: (tag.end, close),
            display,
            existing_qid,
            open_tag: Some((start, tag.end)),
        });
        pos = end;
    }
    out
}

const DISPLAY_ENVIRONMENTS: &[&str] = &[
    "equation", "equation*", "align", "align*", "gather", "gather*", "multline", "multline*", "displaymath",
];

/// Finds the next unescaped occurrence of `delim` at or after `from`.
fn find_unescaped(body: &str, delim: &str, from: usize) -> Option<usize> {
    let bytes = body.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        if bytes[i..].starts_with(delim.as_bytes()) {
            return Some(i);
        }
        if bytes[i] == b'\\' {
            i += 2;
            continue;
        }
        i += 1;
    }
    None
}

fn extract_latex(body: &str) -> Extraction {
    let mut out = Extraction::default();
    let bytes = body.as_bytes();
    let mut i = 0;
    let push = |out: &mut Extraction, start: usize, open: usize, close: Option<usize>, close_len: usize, display| {
        match close {
            Some(c) => {
                out.segments.push(MathSegment {
                    segment_id: out.segments.len(),
                    raw_latex: body[start + open..c].to_string(),
                    span: (start, c + close_len),
                    content_span: (start + open, c),
                    display,
                    existing_qid: None,
                    open_tag: None,
                });
                c + close_len
            }
            None => {
                out.issues.push(ExtractionIssue::UnbalancedDelimiter {
                    start,
                    end: start + open,
                });
                start + open
            }
        }
    };
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                i = body[i..].find('\n').map(|n| i + n + 1).unwrap_or(body.len());
            }
            b'\\' => {
                let rest = &body[i..];
                if rest.starts_with("\\[") {
                    let close = find_unescaped(body, "\\]", i + 2);
                    i = push(&mut out, i, 2, close, 2, Display::Block);
                } else if rest.starts_with("\\(") {
                    let close = find_unescaped(body, "\\)", i + 2);
                    i = push(&mut out, i, 2, close, 2, Display::Inline);
                } else if let Some(env) = DISPLAY_ENVIRONMENTS
                    .iter()
                    .find(|env| rest.starts_with(&format!("\\begin{{{env}}}")))
                {
                    let open = format!("\\begin{{{env}}}").len();
                    let end_tag = format!("\\end{{{env}}}");
                    let close = body[i + open..].find(&end_tag).map(|c| c + i + open);
                    i = push(&mut out, i, open, close, end_tag.len(), Display::Block);
                } else {
                    i += rest.chars().nth(1).map(|c| 1 + c.len_utf8()).unwrap_or(1);
                }
            }
            b'$' => {
                if bytes.get(i + 1) == Some(&b'$') {
                    let close = find_unescaped(body, "$$", i + 2);
                    i = push(&mut out, i, 2, close, 2, Display::Block);
                } else {
                    let close = find_unescaped(body, "$", i + 1);
                    i = push(&mut out, i, 1, close, 1, Display::Inline);
                }
            }
            _ => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Operator,
    Number,
    Relation,
    Command,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Canonical identifier key, set for identifier tokens only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<String>,
    /// Decorating command such as `vec` or `mathbf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoration: Option<String>,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexError {
    pub position: usize,
    pub sequence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedFormula {
    pub segment_id: usize,
    pub tokens: Vec<Token>,
    pub identifier_symbols: Vec<String>,
    pub is_equation: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<LexError>,
}

impl TokenizedFormula {
    /// `(token_index, symbol)` for every identifier token.
    pub fn identifier_occurrences(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == TokenKind::Identifier)
            .map(|(i, t)| (i, t.symbol.as_deref().unwrap_or("")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerOptions {
    /// Function names that stay whole (`\sin`, or a bare `sin`).
    pub command_whitelist: BTreeSet<String>,
    /// Split runs like `rmv` into single-letter identifiers.
    pub split_multiletter: bool,
    /// Maps Greek commands onto a canonical key, e.g. `\varphi` → `\phi`.
    pub greek_aliases: BTreeMap<String, String>,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        let whitelist = [
            "sin", "cos", "tan", "cot", "sec", "csc", "arcsin", "arccos", "arctan", "sinh", "cosh", "tanh", "coth",
            "log", "ln", "lg", "exp", "lim", "liminf", "limsup", "max", "min", "sup", "inf", "det", "dim", "ker",
            "arg", "deg", "gcd", "lcm", "Pr", "mod", "bmod", "pmod", "sgn", "tr", "Re", "Im",
        ];
        let aliases = [
            ("varepsilon", "epsilon"),
            ("vartheta", "theta"),
            ("varphi", "phi"),
            ("varrho", "rho"),
            ("varsigma", "sigma"),
            ("varpi", "pi"),
        ];
        TokenizerOptions {
            command_whitelist: whitelist.iter().map(|s| s.to_string()).collect(),
            split_multiletter: true,
            greek_aliases: aliases
                .iter()
                .map(|(a, b)| (format!("\\{a}"), format!("\\{b}")))
                .collect(),
        }
    }
}

const GREEK: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu", "xi",
    "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega", "Gamma", "Delta", "Theta",
    "Lambda", "Xi", "Pi", "Sigma", "Upsilon", "Phi", "Psi", "Omega", "varepsilon", "vartheta", "varphi", "varrho",
    "varsigma", "varpi", "varkappa", "digamma",
];

/// Letter-like commands that denote identifiers besides Greek letters.
const LETTER_COMMANDS: &[&str] = &["hbar", "ell"];

const UNICODE_GREEK: &[(char, &str)] = &[
    ('α', "alpha"), ('β', "beta"), ('γ', "gamma"), ('δ', "delta"), ('ε', "epsilon"), ('ζ', "zeta"), ('η', "eta"),
    ('θ', "theta"), ('ι', "iota"), ('κ', "kappa"), ('λ', "lambda"), ('μ', "mu"), ('ν', "nu"), ('ξ', "xi"),
    ('π', "pi"), ('ρ', "rho"), ('σ', "sigma"), ('τ', "tau"), ('υ', "upsilon"), ('φ', "phi"), ('χ', "chi"),
    ('ψ', "psi"), ('ω', "omega"), ('Γ', "Gamma"), ('Δ', "Delta"), ('Θ', "Theta"), ('Λ', "Lambda"), ('Ξ', "Xi"),
    ('Π', "Pi"), ('Σ', "Sigma"), ('Φ', "Phi"), ('Ψ', "Psi"), ('Ω', "Omega"), ('ϕ', "varphi"), ('ϵ', "varepsilon"),
];

const DECORATIONS: &[&str] = &[
    "vec", "mathbf", "boldsymbol", "bm", "hat", "bar", "tilde", "overline", "overrightarrow", "widehat",
    "widetilde", "mathit", "mathcal", "mathrm", "mathsf", "mathbb", "check", "breve", "underline",
];
const DERIVATIVE_DECORATIONS: &[&str] = &["dot", "ddot", "dddot"];
const TEXT_COMMANDS: &[&str] = &["text", "textrm", "textit", "textbf", "textsf", "texttt", "mbox", "hbox", "textnormal", "mathrm"];
const RELATIONS: &[&str] = &["leq", "geq", "le", "ge", "approx", "propto", "lt", "gt", "leqslant", "geqslant"];
const OPERATORS: &[&str] = &[
    "cdot", "times", "pm", "mp", "div", "ast", "star", "circ", "bullet", "neq", "ne", "equiv", "sim", "simeq", "cong",
    "to", "rightarrow", "leftarrow", "Rightarrow", "Leftarrow", "leftrightarrow", "Leftrightarrow", "mapsto",
    "infty", "ll", "gg", "in", "notin", "subset", "subseteq", "supset", "cup", "cap", "wedge", "vee", "land", "lor",
    "neg", "langle", "rangle", "lvert", "rvert", "lVert", "rVert", "vert", "Vert", "mid", "ldots", "cdots", "dots",
    "vdots", "ddots", "perp", "parallel", "otimes", "oplus", "dagger", "forall", "exists", "lfloor", "rfloor",
    "lceil", "rceil", "backslash", "angle", "degree",
];
const STRUCTURAL: &[&str] = &[
    "frac", "dfrac", "tfrac", "cfrac", "sqrt", "int", "iint", "iiint", "oint", "sum", "prod", "coprod", "over",
    "binom", "choose", "underbrace", "overbrace", "stackrel", "overset", "underset", "substack", "operatorname",
    "begin", "end", "det",
];
const IGNORED_WORDS: &[&str] = &[
    "quad", "qquad", "displaystyle", "textstyle", "scriptstyle", "scriptscriptstyle", "left", "right", "big", "Big",
    "bigg", "Bigg", "bigl", "bigr", "Bigl", "Bigr", "biggl", "biggr", "Biggl", "Biggr", "limits", "nolimits",
    "partial", "nabla", "prime", "label", "nonumber", "notag", "tag", "phantom", "hspace", "vspace",
    "rm", "bf", "it", "cal", "mathstrut", "strut", "middle", "enspace", "thinspace", "negthinspace",
];

fn is_greek(word: &str) -> bool {
    GREEK.contains(&word)
}

/// True for a canonical identifier key: one ASCII letter or a Greek letter
/// command such as `\alpha`.
pub fn is_identifier_key(s: &str) -> bool {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.is_ascii_alphabetic(),
        (Some('\\'), Some(_)) => {
            let word = &s[1..];
            is_greek(word) || LETTER_COMMANDS.contains(&word)
        }
        _ => false,
    }
}

struct Lexer<'a> {
    src: &'a str,
    opts: &'a TokenizerOptions,
    tokens: Vec<Token>,
    errors: Vec<LexError>,
    depth: usize,
    is_equation: bool,
}

impl<'a> Lexer<'a> {
    fn bytes(&self) -> &'a [u8] {
        self.src.as_bytes()
    }

    fn push(&mut self, kind: TokenKind, start: usize, end: usize) {
        self.push_full(kind, start, end, None, None);
    }

    fn push_full(&mut self, kind: TokenKind, start: usize, end: usize, symbol: Option<String>, decoration: Option<String>) {
        if kind == TokenKind::Relation && &self.src[start..end] == "=" && self.depth == 0 {
            self.is_equation = true;
        }
        self.tokens.push(Token {
            kind,
            text: self.src[start..end].to_string(),
            symbol,
            decoration,
            span: (start, end),
        });
    }

    fn greek_symbol(&self, word: &str) -> String {
        let key = format!("\\{word}");
        self.opts.greek_aliases.get(&key).cloned().unwrap_or(key)
    }

    fn skip_ws(&self, mut i: usize) -> usize {
        while i < self.src.len() && self.bytes()[i].is_ascii_whitespace() {
            i += 1;
        }
        i
    }

    /// End of a balanced `{…}` group starting at `i`, or of the source.
    fn group_end(&self, i: usize) -> usize {
        let b = self.bytes();
        let mut depth = 0usize;
        let mut j = i;
        while j < b.len() {
            match b[j] {
                b'\\' => {
                    j += 1;
                    if j < b.len() {
                        j += self.src[j..].chars().next().map(char::len_utf8).unwrap_or(1);
                    }
                    continue;
                }
                b'{' => depth += 1,
                b'}' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        return j + 1;
                    }
                }
                _ => {}
            }
            j += 1;
        }
        b.len()
    }

    /// End of a control sequence starting at the backslash `i`.
    fn control_end(&self, i: usize) -> usize {
        let b = self.bytes();
        let mut j = i + 1;
        if j < b.len() && b[j].is_ascii_alphabetic() {
            while j < b.len() && b[j].is_ascii_alphabetic() {
                j += 1;
            }
            j
        } else if j < b.len() {
            j + self.src[j..].chars().next().map(char::len_utf8).unwrap_or(1)
        } else {
            j
        }
    }

    /// Span of a macro argument at `i`: a braced group, a control sequence, or one char.
    fn argument(&self, i: usize) -> Option<(usize, usize)> {
        let i = self.skip_ws(i);
        let b = self.bytes();
        match b.get(i)? {
            b'{' => Some((i, self.group_end(i))),
            b'\\' => Some((i, self.control_end(i))),
            _ => {
                let len = self.src[i..].chars().next()?.len_utf8();
                Some((i, i + len))
            }
        }
    }

    /// Identifier key carried by a decoration argument such as `{v}`, `v`, or `{\alpha}`.
    fn argument_identifier(&self, (s, e): (usize, usize)) -> Option<String> {
        let text = &self.src[s..e];
        let inner = text
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .unwrap_or(text)
            .trim();
        if inner.len() == 1 && inner.as_bytes()[0].is_ascii_alphabetic() {
            return Some(inner.to_string());
        }
        let word = inner.strip_prefix('\\')?;
        if is_greek(word) {
            Some(self.greek_symbol(word))
        } else if LETTER_COMMANDS.contains(&word) {
            Some(inner.to_string())
        } else {
            None
        }
    }

    fn run(mut self) -> (Vec<Token>, Vec<LexError>, bool) {
        let b = self.bytes();
        let mut i = 0;
        while i < b.len() {
            let c = b[i];
            if c.is_ascii_whitespace() {
                let end = self.skip_ws(i);
                self.push(TokenKind::Ignored, i, end);
                i = end;
                continue;
            }
            match c {
                b'{' => {
                    self.push(TokenKind::Ignored, i, i + 1);
                    self.depth += 1;
                    i += 1;
                }
                b'}' => {
                    self.depth = self.depth.saturating_sub(1);
                    self.push(TokenKind::Ignored, i, i + 1);
                    i += 1;
                }
                b'^' | b'_' => {
                    let end = self.argument(i + 1).map(|(_, e)| e).unwrap_or(i + 1);
                    self.push(TokenKind::Ignored, i, end);
                    i = end;
                }
                b'\\' => i = self.control(i),
                b'0'..=b'9' => {
                    let mut j = i;
                    while j < b.len() && b[j].is_ascii_digit() {
                        j += 1;
                    }
                    if j + 1 < b.len() && b[j] == b'.' && b[j + 1].is_ascii_digit() {
                        j += 1;
                        while j < b.len() && b[j].is_ascii_digit() {
                            j += 1;
                        }
                    }
                    self.push(TokenKind::Number, i, j);
                    i = j;
                }
                b'a'..=b'z' | b'A'..=b'Z' => {
                    let mut j = i;
                    while j < b.len() && b[j].is_ascii_alphabetic() {
                        j += 1;
                    }
                    let run = &self.src[i..j];
                    if run.len() > 1 && self.opts.command_whitelist.contains(run) {
                        self.push(TokenKind::Command, i, j);
                    } else if run.len() == 1 || self.opts.split_multiletter {
                        for k in i..j {
                            self.push_full(TokenKind::Identifier, k, k + 1, Some(self.src[k..k + 1].to_string()), None);
                        }
                    } else {
                        self.push(TokenKind::Ignored, i, j);
                    }
                    i = j;
                }
                b'=' | b'<' | b'>' => {
                    self.push(TokenKind::Relation, i, i + 1);
                    i += 1;
                }
                b'\'' | b'&' | b'~' => {
                    self.push(TokenKind::Ignored, i, i + 1);
                    i += 1;
                }
                _ if c.is_ascii() => {
                    self.push(TokenKind::Operator, i, i + 1);
                    i += 1;
                }
                _ => {
                    let ch = self.src[i..].chars().next().expect("char boundary");
                    let end = i + ch.len_utf8();
                    if let Some((_, name)) = UNICODE_GREEK.iter().find(|(g, _)| *g == ch) {
                        let sym = self.greek_symbol(name);
                        self.push_full(TokenKind::Identifier, i, end, Some(sym), None);
                    } else if ch.is_alphabetic() {
                        self.push(TokenKind::Ignored, i, end);
                    } else if matches!(ch, '≤' | '≥' | '≈' | '∝') {
                        self.push(TokenKind::Relation, i, end);
                    } else {
                        self.push(TokenKind::Operator, i, end);
                    }
                    i = end;
                }
            }
        }
        (self.tokens, self.errors, self.is_equation)
    }

    fn control(&mut self, i: usize) -> usize {
        let b = self.bytes();
        let end = self.control_end(i);
        if end == i + 1 {
            self.errors.push(LexError {
                position: i,
                sequence: "\\".into(),
            });
            self.push(TokenKind::Ignored, i, end);
            return end;
        }
        if !b[i + 1].is_ascii_alphabetic() {
            let kind = match b[i + 1] {
                b'{' | b'}' | b'|' | b'%' | b'$' | b'#' | b'&' | b'_' => TokenKind::Operator,
                b',' | b';' | b'!' | b':' | b'>' | b' ' | b'\\' => TokenKind::Ignored,
                _ => {
                    self.errors.push(LexError {
                        position: i,
                        sequence: self.src[i..end].to_string(),
                    });
                    TokenKind::Ignored
                }
            };
            self.push(kind, i, end);
            return end;
        }
        let word = &self.src[i + 1..end];

        if is_greek(word) {
            let sym = self.greek_symbol(word);
            self.push_full(TokenKind::Identifier, i, end, Some(sym), None);
            return end;
        }
        if LETTER_COMMANDS.contains(&word) {
            self.push_full(TokenKind::Identifier, i, end, Some(format!("\\{word}")), None);
            return end;
        }
        if DECORATIONS.contains(&word) {
            if let Some(arg) = self.argument(end) {
                if let Some(sym) = self.argument_identifier(arg) {
                    if word == "mathrm" && sym == "d" {
                        // differential
                        self.push(TokenKind::Ignored, i, arg.1);
                    } else {
                        self.push_full(TokenKind::Identifier, i, arg.1, Some(sym), Some(word.to_string()));
                    }
                    return arg.1;
                }
                if TEXT_COMMANDS.contains(&word) {
                    self.push(TokenKind::Ignored, i, arg.1);
                    return arg.1;
                }
            }
            self.push(TokenKind::Command, i, end);
            return end;
        }
        if TEXT_COMMANDS.contains(&word) {
            let stop = self.argument(end).map(|a| a.1).unwrap_or(end);
            self.push(TokenKind::Ignored, i, stop);
            return stop;
        }
        if DERIVATIVE_DECORATIONS.contains(&word) || IGNORED_WORDS.contains(&word) {
            self.push(TokenKind::Ignored, i, end);
            return end;
        }
        if RELATIONS.contains(&word) {
            self.push(TokenKind::Relation, i, end);
            return end;
        }
        if OPERATORS.contains(&word) {
            self.push(TokenKind::Operator, i, end);
            return end;
        }
        if matches!(word, "begin" | "end" | "operatorname") {
            let stop = match self.argument(end) {
                Some((s, e)) if b[s] == b'{' => e,
                _ => end,
            };
            self.push(TokenKind::Command, i, stop);
            return stop;
        }
        if STRUCTURAL.contains(&word) || self.opts.command_whitelist.contains(word) {
            self.push(TokenKind::Command, i, end);
            return end;
        }
        self.errors.push(LexError {
            position: i,
            sequence: self.src[i..end].to_string(),
        });
        self.push(TokenKind::Ignored, i, end);
        end
    }
}

/// Splits a LaTeX formula into tokens whose spans tile the input.
pub fn tokenize_formula(raw_latex: &str, options: &TokenizerOptions) -> TokenizedFormula {
    let lexer = Lexer {
        src: raw_latex,
        opts: options,
        tokens: Vec::new(),
        errors: Vec::new(),
        depth: 0,
        is_equation: false,
    };
    let (tokens, errors, is_equation) = lexer.run();
    let mut seen = BTreeSet::new();
    let identifier_symbols = tokens
        .iter()
        .filter_map(|t| t.symbol.as_ref())
        .filter(|s| seen.insert(s.as_str()))
        .cloned()
        .collect();
    TokenizedFormula {
        segment_id: 0,
        tokens,
        identifier_symbols,
        is_equation,
        errors,
    }
}

pub fn tokenize_segment(segment: &MathSegment, options: &TokenizerOptions) -> TokenizedFormula {
    TokenizedFormula {
        segment_id: segment.segment_id,
        ..tokenize_formula(&segment.raw_latex, options)
    }
}

/// Normal form used for formula comparison.
///
/// Drops thin/medium/negative spaces and whitespace, writes `\mathbf` as
/// `\vec`, and unwraps single-character groups that are not macro
/// arguments. A single space survives only where it terminates a control
/// word before a letter. Idempotent.
pub fn canonicalize_latex(raw_latex: &str) -> String {
    let mut current = canonical_pass(raw_latex);
    loop {
        let next = canonical_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn canonical_pass(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    // true while the last emitted item is a control word like `\alpha`
    let mut after_word = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            let mut j = i;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if after_word && j < chars.len() && chars[j].is_ascii_alphabetic() {
                out.push(' ');
                after_word = false;
            }
            i = j;
            continue;
        }
        if c == '\\' {
            let Some(&next) = chars.get(i + 1) else {
                out.push('\\');
                after_word = false;
                i += 1;
                continue;
            };
            if !next.is_ascii_alphabetic() {
                if !matches!(next, ',' | ';' | '!' | ' ') {
                    out.push('\\');
                    out.push(next);
                    after_word = false;
                }
                i += 2;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_alphabetic() {
                j += 1;
            }
            let word: String = chars[i + 1..j].iter().collect();
            let word = if word == "mathbf" { "vec".to_string() } else { word };
            out.push('\\');
            out.push_str(&word);
            i = j;
            if word == "vec" {
                let mut k = i;
                while k < chars.len() && chars[k].is_whitespace() {
                    k += 1;
                }
                match chars.get(k) {
                    Some('{') | None => {}
                    Some('\\') => {
                        let mut m = k + 1;
                        if m < chars.len() && chars[m].is_ascii_alphabetic() {
                            while m < chars.len() && chars[m].is_ascii_alphabetic() {
                                m += 1;
                            }
                        } else {
                            m = (m + 1).min(chars.len());
                        }
                        out.push('{');
                        out.extend(&chars[k..m]);
                        out.push('}');
                        i = m;
                        after_word = false;
                        continue;
                    }
                    Some(&ch) => {
                        out.push('{');
                        out.push(ch);
                        out.push('}');
                        i = k + 1;
                        after_word = false;
                        continue;
                    }
                }
            }
            after_word = true;
            continue;
        }
        if c == '{' && !after_word {
            if let (Some(&inner), Some('}')) = (chars.get(i + 1), chars.get(i + 2)) {
                if !matches!(inner, '\\' | '{' | '}') && !inner.is_whitespace() {
                    out.push(inner);
                    i += 3;
                    continue;
                }
            }
        }
        out.push(c);
        after_word = false;
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn wiki(body: &str) -> RawDocument {
        RawDocument::new("t", body, DocFormat::Wikitext, Origin::File).unwrap()
    }

    fn latex(body: &str) -> RawDocument {
        RawDocument::new("t", body, DocFormat::Latex, Origin::File).unwrap()
    }

    fn idents(raw: &str) -> Vec<String> {
        tokenize_formula(raw, &TokenizerOptions::default()).identifier_symbols
    }

    #[test]
    fn block_math_with_qid() {
        let doc = wiki(r#"Intro <math display="block" qid=Q35875>E=m\,c^2</math> tail"#);
        let ex = extract_math_segments(&doc);
        assert!(ex.issues.is_empty());
        assert_eq!(ex.segments.len(), 1);
        let s = &ex.segments[0];
        assert_eq!(s.raw_latex, r"E=m\,c^2");
        assert_eq!(s.display, Display::Block);
        assert_eq!(s.existing_qid.as_deref(), Some("Q35875"));
        assert_eq!(&doc.body[s.span.0..s.span.1], r#"<math display="block" qid=Q35875>E=m\,c^2</math>"#);
    }

    #[test]
    fn no_math() {
        assert!(extract_math_segments(&wiki("plain prose only")).segments.is_empty());
        assert!(extract_math_segments(&latex("plain prose only")).segments.is_empty());
    }

    #[test]
    fn mixed_inline_between_blocks() {
        let body = "<math display=\"block\">a=b</math> so <math>v=d/t</math> and <math display='block'>c</math>";
        let ex = extract_math_segments(&wiki(body));
        assert_eq!(ex.segments.len(), 3);
        assert_eq!(ex.segments[1].raw_latex, "v=d/t");
        assert_eq!(ex.segments[1].display, Display::Inline);
        assert_eq!(ex.segments[2].display, Display::Block);
        for w in ex.segments.windows(2) {
            assert!(w[0].span.1 <= w[1].span.0);
            assert!(w[0].segment_id < w[1].segment_id);
        }
    }

    #[test]
    fn latex_delimiters() {
        let body = r"Energy $E=mc^2$ and $$F = ma$$ then \[ p = mv \] and \(x\), cost \$5.";
        let ex = extract_math_segments(&latex(body));
        let raws: Vec<_> = ex.segments.iter().map(|s| s.raw_latex.as_str()).collect();
        assert_eq!(raws, ["E=mc^2", "F = ma", " p = mv ", "x"]);
        assert_eq!(ex.segments[1].display, Display::Block);
        assert_eq!(ex.segments[2].display, Display::Block);
        assert_eq!(ex.segments[0].display, Display::Inline);
    }

    #[test]
    fn latex_environment_and_comments() {
        let body = "% $not math$\n\\begin{equation}\nW = F d\n\\end{equation}";
        let ex = extract_math_segments(&latex(body));
        assert_eq!(ex.segments.len(), 1);
        assert_eq!(ex.segments[0].raw_latex.trim(), "W = F d");
    }

    #[test]
    fn unbalanced_reported_and_skipped() {
        let body = "<math>a=b</math> broken <math>x=y and later <math>c</math>";
        let ex = extract_math_segments(&wiki(body));
        // the unterminated tag swallows up to the next close tag
        assert_eq!(ex.segments.len(), 2);
        let ex = extract_math_segments(&wiki("ok <math>a</math> then <math>never closed"));
        assert_eq!(ex.segments.len(), 1);
        assert_eq!(ex.issues.len(), 1);
        let ex = extract_math_segments(&latex("$a$ and $b"));
        assert_eq!(ex.segments.len(), 1);
        assert!(matches!(ex.issues[0], ExtractionIssue::UnbalancedDelimiter { start: 8, .. }));
    }

    #[test]
    fn comments_and_self_closing_skipped() {
        let body = "<!-- <math>hidden</math> --> <math/> <MATH display=block>k</MATH>";
        let ex = extract_math_segments(&wiki(body));
        assert_eq!(ex.segments.len(), 1);
        assert_eq!(ex.segments[0].raw_latex, "k");
        assert_eq!(ex.segments[0].display, Display::Block);
    }

    #[test]
    fn mathematics_word_is_not_a_tag() {
        let ex = extract_math_segments(&wiki("<mathematics>x</mathematics>"));
        assert!(ex.segments.is_empty());
    }

    #[test]
    fn splits_multiletter_runs() {
        let t = tokenize_formula("L = rmv", &TokenizerOptions::default());
        assert_eq!(t.identifier_symbols, ["L", "r", "m", "v"]);
        assert!(t.is_equation);
    }

    #[test]
    fn no_split_leaves_run_unparsed() {
        let opts = TokenizerOptions {
            split_multiletter: false,
            ..Default::default()
        };
        let t = tokenize_formula("L = rmv", &opts);
        assert_eq!(t.identifier_symbols, ["L"]);
    }

    #[test]
    fn superscript_is_ignored() {
        let t = tokenize_formula("E=mc^2", &TokenizerOptions::default());
        assert_eq!(t.identifier_symbols, ["E", "m", "c"]);
        assert!(t.is_equation);
        let sup = t.tokens.iter().find(|t| t.text == "^2").unwrap();
        assert_eq!(sup.kind, TokenKind::Ignored);
    }

    #[test]
    fn number_only() {
        let t = tokenize_formula("42", &TokenizerOptions::default());
        assert_eq!(t.tokens.len(), 1);
        assert_eq!(t.tokens[0].kind, TokenKind::Number);
        assert!(t.identifier_symbols.is_empty());
        assert!(!t.is_equation);
        assert_eq!(tokenize_formula("3.14", &TokenizerOptions::default()).tokens.len(), 1);
    }

    #[test]
    fn indices_never_identifiers() {
        assert_eq!(idents("F_{net} = m_1 a_{x}"), ["F", "m", "a"]);
        assert_eq!(idents(r"x_\alpha^{\beta}"), ["x"]);
        assert_eq!(idents("e^{x=0}"), ["e"]);
        assert!(!tokenize_formula("e^{x=0}", &TokenizerOptions::default()).is_equation);
        assert!(!tokenize_formula(r"\frac{a=b}{c}", &TokenizerOptions::default()).is_equation);
    }

    #[test]
    fn vectors_and_greek() {
        assert_eq!(idents(r"\vec v = \mathbf{v}"), ["v"]);
        let t = tokenize_formula(r"\mathbf{F} = q\vec{E}", &TokenizerOptions::default());
        let f = &t.tokens[0];
        assert_eq!(f.symbol.as_deref(), Some("F"));
        assert_eq!(f.decoration.as_deref(), Some("mathbf"));
        assert_eq!(idents(r"\lambda = \frac{c}{\nu}"), [r"\lambda", "c", r"\nu"]);
        assert_eq!(idents(r"\varphi + \phi"), [r"\phi"]);
        assert_eq!(idents("λ = c/ν"), [r"\lambda", "c", r"\nu"]);
        assert_eq!(idents(r"E = \hbar\omega"), ["E", r"\hbar", r"\omega"]);
    }

    #[test]
    fn functions_and_derivatives() {
        assert_eq!(idents(r"y = A\sin(kx)"), ["y", "A", "k", "x"]);
        assert_eq!(idents("y = A sin x"), ["y", "A", "x"]);
        assert_eq!(idents(r"F = \frac{\partial L}{\partial q}"), ["F", "L", "q"]);
        assert_eq!(idents(r"v = \dot x"), ["v", "x"]);
        assert_eq!(idents(r"v' = \mathrm{d}x"), ["v", "x"]);
        assert_eq!(idents(r"m = 5\,\mathrm{kg}"), ["m"]);
        assert_eq!(idents(r"\text{where } a=b"), ["a", "b"]);
        assert_eq!(idents(r"\begin{aligned} a &= b \end{aligned}"), ["a", "b"]);
    }

    #[test]
    fn relations() {
        let t = tokenize_formula(r"a \leq b < c \approx d", &TokenizerOptions::default());
        let rel: Vec<_> = t.tokens.iter().filter(|t| t.kind == TokenKind::Relation).map(|t| t.text.as_str()).collect();
        assert_eq!(rel, [r"\leq", "<", r"\approx"]);
        assert!(!t.is_equation);
    }

    #[test]
    fn unknown_macro_degrades() {
        let t = tokenize_formula(r"a = \foo b", &TokenizerOptions::default());
        assert_eq!(t.errors.len(), 1);
        assert_eq!(t.errors[0].position, 4);
        assert_eq!(t.identifier_symbols, ["a", "b"]);
        assert!(t.tokens.iter().any(|t| t.text == r"\foo" && t.kind == TokenKind::Ignored));
    }

    #[test]
    fn spans_tile_input() {
        for raw in [r"E=m\,c^2", r"\vec{F} = m \vec a", "  x  ", r"\sqrt{x^2+y^2}", "α+β", r"\\ \{"] {
            let t = tokenize_formula(raw, &TokenizerOptions::default());
            let mut pos = 0;
            for tok in &t.tokens {
                assert_eq!(tok.span.0, pos, "{raw}");
                assert_eq!(&raw[tok.span.0..tok.span.1], tok.text);
                pos = tok.span.1;
            }
            assert_eq!(pos, raw.len());
        }
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(canonicalize_latex(r"E=m\,c^2"), "E=mc^2");
        assert_eq!(canonicalize_latex("x"), "x");
        assert_eq!(canonicalize_latex(r"\mathbf{v} = \vec{v}"), r"\vec{v}=\vec{v}");
        assert_eq!(canonicalize_latex(r"\vec v"), canonicalize_latex(r"\mathbf{v}"));
        assert_eq!(canonicalize_latex(r"E = m c^{2}"), "E=mc^2");
        assert_eq!(canonicalize_latex(r"\alpha x"), r"\alpha x");
        assert_eq!(canonicalize_latex(r"{{x}}"), "x");
        assert_eq!(canonicalize_latex(r"\frac{1}{2}"), r"\frac{1}2");
        assert_eq!(canonicalize_latex(r"\{x\}"), r"\{x\}");
        assert_eq!(canonicalize_latex(r"\vec\omega"), r"\vec{\omega}");
    }

    #[test]
    fn identifier_keys() {
        for ok in ["m", "E", r"\alpha", r"\Omega", r"\hbar"] {
            assert!(is_identifier_key(ok), "{ok}");
        }
        for bad in ["", "mv", "1", r"\sin", "\\", "é"] {
            assert!(!is_identifier_key(bad), "{bad}");
        }
    }
}
