//! Strict parser and serializer for the static markup used by layout templates.
//!
//! Only well-formed documents are accepted: every non-void element must be
//! closed and nesting must match. Text and attribute values are kept in their
//! source (entity-escaped) form so a parse/serialize cycle is lossless.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct MarkupError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attr {
    pub name: String,
    /// `None` for bare boolean attributes such as `checked`.
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<Attr>,
    pub children: Vec<Node>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
    Comment(String),
    Doctype(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    pub nodes: Vec<Node>,
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track",
    "wbr",
];
const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title"];

pub fn is_void(name: &str) -> bool {
    VOID.contains(&name)
}

impl Element {
    pub fn new(name: &str) -> Self {
        Element {
            name: name.to_string(),
            attrs: Vec::new(),
            children: Vec::new(),
            pos: Pos::default(),
        }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.value.as_deref().unwrap_or(""))
    }

    pub fn has_attr(&self, name: &str) -> bool {
        self.attrs.iter().any(|a| a.name == name)
    }

    pub fn set_attr(&mut self, name: &str, value: Option<String>) {
        match self.attrs.iter_mut().find(|a| a.name == name) {
            Some(attr) => attr.value = value,
            None => self.attrs.push(Attr {
                name: name.to_string(),
                value,
            }),
        }
    }

    pub fn remove_attr(&mut self, name: &str) {
        self.attrs.retain(|a| a.name != name);
    }

    /// Concatenated raw text of all descendant text nodes.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        collect_text(&self.children, &mut out);
        out
    }

    pub fn child_elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            _ => None,
        })
    }
}

fn collect_text(nodes: &[Node], out: &mut String) {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) => collect_text(&e.children, out),
            _ => {}
        }
    }
}

impl Document {
    /// Depth-first, pre-order visit of every element with its ancestor chain.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Element, &[&'a Element])) {
        fn go<'a>(
            nodes: &'a [Node],
            stack: &mut Vec<&'a Element>,
            f: &mut dyn FnMut(&'a Element, &[&'a Element]),
        ) {
            for node in nodes {
                if let Node::Element(e) = node {
                    f(e, stack);
                    stack.push(e);
                    go(&e.children, stack, f);
                    stack.pop();
                }
            }
        }
        go(&self.nodes, &mut Vec::new(), f);
    }

    pub fn elements(&self) -> Vec<&Element> {
        let mut out = Vec::new();
        self.visit(&mut |e, _| out.push(e));
        out
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Element)) {
        fn go(nodes: &mut [Node], f: &mut dyn FnMut(&mut Element)) {
            for node in nodes {
                if let Node::Element(e) = node {
                    f(e);
                    go(&mut e.children, f);
                }
            }
        }
        go(&mut self.nodes, f);
    }

    /// Removes every element (with its subtree) for which `drop` returns true.
    pub fn retain_elements(&mut self, drop: &dyn Fn(&Element) -> bool) {
        fn go(nodes: &mut Vec<Node>, drop: &dyn Fn(&Element) -> bool) {
            nodes.retain(|n| !matches!(n, Node::Element(e) if drop(e)));
            for node in nodes.iter_mut() {
                if let Node::Element(e) = node {
                    go(&mut e.children, drop);
                }
            }
        }
        go(&mut self.nodes, drop);
    }

    pub fn to_html(&self) -> String {
        let mut out = String::new();
        write_nodes(&self.nodes, &mut out);
        out
    }
}

fn write_nodes(nodes: &[Node], out: &mut String) {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Comment(c) => {
                let _ = write!(out, "<!--{c}-->");
            }
            Node::Doctype(d) => {
                let _ = write!(out, "<!{d}>");
            }
            Node::Element(e) => {
                out.push('<');
                out.push_str(&e.name);
                for attr in &e.attrs {
                    out.push(' ');
                    out.push_str(&attr.name);
                    if let Some(v) = &attr.value {
                        out.push_str("=\"");
                        out.push_str(&v.replace('"', "&quot;"));
                        out.push('"');
                    }
                }
                out.push('>');
                if !is_void(&e.name) {
                    write_nodes(&e.children, out);
                    let _ = write!(out, "</{}>", e.name);
                }
            }
        }
    }
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Decodes the handful of named and numeric entities templates use.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let Some(end) = rest[..rest.len().min(12)].find(';') else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..end];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" | "#39" => Some('\''),
            "nbsp" => Some('\u{a0}'),
            _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                u32::from_str_radix(&entity[2..], 16)
                    .ok()
                    .and_then(char::from_u32)
            }
            _ if entity.starts_with('#') => entity[1..].parse().ok().and_then(char::from_u32),
            _ => None,
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[end + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

struct Cursor<'a> {
    src: &'a str,
    at: usize,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.at..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.at += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn advance(&mut self, bytes: usize) -> &'a str {
        let start = self.at;
        while self.at < start + bytes {
            self.bump();
        }
        &self.src[start..self.at]
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_whitespace()) {
            self.bump();
        }
    }

    fn error(&self, pos: Pos, message: impl Into<String>) -> MarkupError {
        MarkupError {
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }
}

pub fn parse(src: &str) -> Result<Document, MarkupError> {
    let mut cur = Cursor {
        src,
        at: 0,
        line: 1,
        col: 1,
    };
    // Open elements; the document root collects top-level nodes.
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Vec<Node> = Vec::new();

    fn push(node: Node, stack: &mut [Element], root: &mut Vec<Node>) {
        match stack.last_mut() {
            Some(parent) => parent.children.push(node),
            None => root.push(node),
        }
    }

    while cur.peek().is_some() {
        let rest = cur.rest();
        if rest.starts_with("<!--") {
            let start = cur.pos();
            let Some(end) = rest.find("-->") else {
                return Err(cur.error(start, "unterminated comment"));
            };
            let body = cur.advance(end + 3);
            push(
                Node::Comment(body[4..body.len() - 3].to_string()),
                &mut stack,
                &mut root,
            );
        } else if rest.starts_with("<!") {
            let start = cur.pos();
            let Some(end) = rest.find('>') else {
                return Err(cur.error(start, "unterminated declaration"));
            };
            let body = cur.advance(end + 1);
            push(
                Node::Doctype(body[2..body.len() - 1].to_string()),
                &mut stack,
                &mut root,
            );
        } else if rest.starts_with("</") {
            let start = cur.pos();
            cur.advance(2);
            let name =
                read_name(&mut cur).ok_or_else(|| cur.error(start, "malformed closing tag"))?;
            cur.skip_ws();
            if cur.bump() != Some('>') {
                return Err(cur.error(start, format!("malformed closing tag </{name}")));
            }
            match stack.pop() {
                Some(open) if open.name == name => push(Node::Element(open), &mut stack, &mut root),
                Some(open) => {
                    return Err(cur.error(
                        start,
                        format!(
                            "closing tag </{name}> does not match <{}> opened at {}:{}",
                            open.name, open.pos.line, open.pos.col
                        ),
                    ))
                }
                None => {
                    return Err(
                        cur.error(start, format!("closing tag </{name}> without open element"))
                    )
                }
            }
        } else if rest.starts_with('<') {
            let start = cur.pos();
            cur.bump();
            let name =
                read_name(&mut cur).ok_or_else(|| cur.error(start, "unescaped '<' in text"))?;
            let mut element = Element {
                name,
                attrs: Vec::new(),
                children: Vec::new(),
                pos: start,
            };
            let self_closed = read_attrs(&mut cur, &mut element)?;
            if self_closed || is_void(&element.name) {
                push(Node::Element(element), &mut stack, &mut root);
            } else if RAW_TEXT.contains(&element.name.as_str()) {
                let close = format!("</{}", element.name);
                let body_len = cur
                    .rest()
                    .to_ascii_lowercase()
                    .find(&close)
                    .ok_or_else(|| cur.error(start, format!("unclosed <{}>", element.name)))?;
                let body = cur.advance(body_len);
                if !body.is_empty() {
                    element.children.push(Node::Text(body.to_string()));
                }
                cur.advance(close.len());
                cur.skip_ws();
                if cur.bump() != Some('>') {
                    return Err(cur.error(
                        start,
                        format!("malformed closing tag for <{}>", element.name),
                    ));
                }
                push(Node::Element(element), &mut stack, &mut root);
            } else {
                stack.push(element);
            }
        } else {
            let end = rest.find('<').unwrap_or(rest.len());
            let text = cur.advance(end);
            push(Node::Text(text.to_string()), &mut stack, &mut root);
        }
    }

    if let Some(open) = stack.pop() {
        return Err(cur.error(open.pos, format!("unclosed <{}>", open.name)));
    }
    Ok(Document { nodes: root })
}

fn read_name(cur: &mut Cursor<'_>) -> Option<String> {
    let first = cur.peek()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    let mut name = String::new();
    while let Some(c) = cur.peek() {
        if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == ':' {
            name.push(c.to_ascii_lowercase());
            cur.bump();
        } else {
            break;
        }
    }
    Some(name)
}

/// Reads attributes up to the end of a start tag; returns true for `/>`.
fn read_attrs(cur: &mut Cursor<'_>, element: &mut Element) -> Result<bool, MarkupError> {
    loop {
        cur.skip_ws();
        let here = cur.pos();
        match cur.peek() {
            None => {
                return Err(cur.error(element.pos, format!("unterminated <{}> tag", element.name)))
            }
            Some('>') => {
                cur.bump();
                return Ok(false);
            }
            Some('/') => {
                cur.bump();
                if cur.bump() != Some('>') {
                    return Err(cur.error(here, "expected '>' after '/'"));
                }
                return Ok(true);
            }
            Some(_) => {}
        }
        let mut name = String::new();
        while let Some(c) = cur.peek() {
            if c.is_whitespace() || c == '=' || c == '>' || c == '/' || c == '"' || c == '\'' {
                break;
            }
            name.push(c.to_ascii_lowercase());
            cur.bump();
        }
        if name.is_empty() {
            return Err(cur.error(here, "malformed attribute"));
        }
        cur.skip_ws();
        let value = if cur.peek() == Some('=') {
            cur.bump();
            cur.skip_ws();
            match cur.peek() {
                Some(q @ ('"' | '\'')) => {
                    cur.bump();
                    let Some(end) = cur.rest().find(q) else {
                        return Err(
                            cur.error(here, format!("unterminated value for attribute `{name}`"))
                        );
                    };
                    let v = cur.advance(end).to_string();
                    cur.bump();
                    Some(v)
                }
                Some(_) => {
                    let end = cur
                        .rest()
                        .find(|c: char| c.is_whitespace() || c == '>')
                        .unwrap_or(cur.rest().len());
                    Some(cur.advance(end).to_string())
                }
                None => {
                    return Err(cur.error(here, format!("missing value for attribute `{name}`")))
                }
            }
        } else {
            None
        };
        if element.has_attr(&name) {
            return Err(cur.error(
                here,
                format!("duplicate attribute `{name}` on <{}>", element.name),
            ));
        }
        element.attrs.push(Attr { name, value });
    }
}
