//! Run document format of the file store.
//!
//! ```xml
//! <?xml version="1.0" encoding="UTF-8"?>
//! <run format="obk-run" version="1">
//!   <header>
//!     <partition>TB</partition>
//!     <run_number>1</run_number>
//!     <start_time>2002-08-14T12:00:00.000Z</start_time>
//!     <end_time>2002-08-14T13:00:00.000Z</end_time>   <!-- absent while Open -->
//!     <status>Good</status>
//!     <num_events>500</num_events>
//!     <max_events>1000</max_events>
//!     <trigger_type>Physics</trigger_type>
//!     <beam_type>Muons</beam_type>
//!     <detector_mask>0x00000001</detector_mask>
//!   </header>
//!   <mrs id="1" severity="Error" timestamp="...">
//!     <message_name>..</message_name><application>..</application>
//!     <text>..</text><qualifier>..</qualifier>
//!   </mrs>
//!   <is id="2" timestamp="...">
//!     <server>..</server><object_name>..</object_name><class_name>..</class_name>
//!     <attr name="beam_energy" type="int">150</attr>
//!   </is>
//!   <comment id="1" created_at="..." origin="Web">
//!     <author>..</author><text>..</text>
//!     <attachment filename="a.txt" media_type="text/plain" size_bytes="3" digest="..."/>
//!   </comment>
//! </run>
//! ```
//!
//! Records appear in arrival (record id) order. Element text holding
//! characters that XML 1.0 cannot represent is written base64-encoded with an
//! `enc="b64"` attribute.

use std::fmt::Write as _;

use base64::Engine as _;
use roxmltree::{Document, Node};

use super::{RunDetail, StoredIs, StoredMrs};
use crate::model::{
    Attachment, Attribute, Comment, IsInfo, MrsMessage, RunHeader, Scalar, ScalarType,
};

fn xml_char_ok(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..)
}

fn escape_into(out: &mut String, s: &str, attribute: bool) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attribute => out.push_str("&quot;"),
            '\r' => out.push_str("&#13;"),
            '\n' if attribute => out.push_str("&#10;"),
            '\t' if attribute => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

fn attr(out: &mut String, name: &str, value: &str) {
    let _ = write!(out, " {name}=\"");
    escape_into(out, value, true);
    out.push('"');
}

fn text_elem(out: &mut String, indent: &str, name: &str, value: &str) {
    let _ = write!(out, "{indent}<{name}");
    if value.chars().all(xml_char_ok) {
        out.push('>');
        escape_into(out, value, false);
    } else {
        out.push_str(" enc=\"b64\">");
        out.push_str(&base64::engine::general_purpose::STANDARD.encode(value.as_bytes()));
    }
    let _ = writeln!(out, "</{name}>");
}

fn write_header(out: &mut String, h: &RunHeader) {
    out.push_str("  <header>\n");
    let i = "    ";
    text_elem(out, i, "partition", &h.partition);
    text_elem(out, i, "run_number", &h.run_number.to_string());
    text_elem(out, i, "start_time", &h.start_time.to_string());
    if let Some(end) = h.end_time {
        text_elem(out, i, "end_time", &end.to_string());
    }
    text_elem(out, i, "status", h.status.as_str());
    text_elem(out, i, "num_events", &h.num_events.to_string());
    text_elem(out, i, "max_events", &h.max_events.to_string());
    text_elem(out, i, "trigger_type", h.trigger_type.as_str());
    text_elem(out, i, "beam_type", &h.beam_type);
    text_elem(out, i, "detector_mask", &h.detector_mask.to_string());
    out.push_str("  </header>\n");
}

fn write_mrs(out: &mut String, r: &StoredMrs) {
    let m = &r.message;
    out.push_str("  <mrs");
    attr(out, "id", &r.record_id.to_string());
    attr(out, "severity", m.severity.as_str());
    attr(out, "timestamp", &m.timestamp.to_string());
    out.push_str(">\n");
    let i = "    ";
    text_elem(out, i, "message_name", &m.message_name);
    text_elem(out, i, "application", &m.application);
    text_elem(out, i, "text", &m.text);
    for q in &m.qualifiers {
        text_elem(out, i, "qualifier", q);
    }
    out.push_str("  </mrs>\n");
}

fn write_is(out: &mut String, r: &StoredIs) {
    let info = &r.info;
    out.push_str("  <is");
    attr(out, "id", &r.record_id.to_string());
    attr(out, "timestamp", &info.timestamp.to_string());
    out.push_str(">\n");
    let i = "    ";
    text_elem(out, i, "server", &info.server);
    text_elem(out, i, "object_name", &info.object_name);
    text_elem(out, i, "class_name", &info.class_name);
    for a in &info.attributes {
        let text = a.value.to_text();
        out.push_str(i);
        out.push_str("<attr");
        attr(out, "name", &a.name);
        attr(out, "type", a.value.scalar_type().as_str());
        if text.chars().all(xml_char_ok) {
            out.push('>');
            escape_into(out, &text, false);
        } else {
            out.push_str(" enc=\"b64\">");
            out.push_str(&base64::engine::general_purpose::STANDARD.encode(text.as_bytes()));
        }
        out.push_str("</attr>\n");
    }
    out.push_str("  </is>\n");
}

pub(super) fn write_comment(out: &mut String, c: &Comment) {
    out.push_str("  <comment");
    attr(out, "id", &c.comment_id.to_string());
    attr(out, "created_at", &c.created_at.to_string());
    attr(out, "origin", c.origin.as_str());
    out.push_str(">\n");
    text_elem(out, "    ", "author", &c.author);
    text_elem(out, "    ", "text", &c.text);
    for a in &c.attachments {
        out.push_str("    <attachment");
        attr(out, "filename", &a.filename);
        attr(out, "media_type", &a.media_type);
        attr(out, "size_bytes", &a.size_bytes.to_string());
        attr(out, "digest", &a.digest);
        out.push_str("/>\n");
    }
    out.push_str("  </comment>\n");
}

/// Serializes a complete run document.
pub fn write_run(detail: &RunDetail) -> String {
    let mut out = String::with_capacity(1024 + 256 * (detail.mrs.len() + detail.is.len()));
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<run format=\"obk-run\" version=\"1\">\n");
    write_header(&mut out, &detail.header);
    let mut records: Vec<(u64, Either<'_>)> = detail
        .mrs
        .iter()
        .map(|m| (m.record_id, Either::Mrs(m)))
        .chain(detail.is.iter().map(|i| (i.record_id, Either::Is(i))))
        .collect();
    records.sort_by_key(|(id, _)| *id);
    for (_, r) in records {
        match r {
            Either::Mrs(m) => write_mrs(&mut out, m),
            Either::Is(i) => write_is(&mut out, i),
        }
    }
    for c in &detail.comments {
        write_comment(&mut out, c);
    }
    out.push_str("</run>\n");
    out
}

enum Either<'a> {
    Mrs(&'a StoredMrs),
    Is(&'a StoredIs),
}

type ParseResult<T> = Result<T, String>;

fn elem_text(node: Node<'_, '_>) -> ParseResult<String> {
    let raw: String = node
        .children()
        .filter(|c| c.is_text())
        .filter_map(|c| c.text())
        .collect();
    match node.attribute("enc") {
        None => Ok(raw),
        Some("b64") => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(raw.trim())
                .map_err(|e| format!("<{}>: bad base64: {e}", node.tag_name().name()))?;
            String::from_utf8(bytes).map_err(|e| format!("<{}>: {e}", node.tag_name().name()))
        }
        Some(other) => Err(format!("unknown encoding {other:?}")),
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn req_text(node: Node<'_, '_>, name: &str) -> ParseResult<String> {
    child(node, name)
        .ok_or_else(|| format!("<{}> lacks <{name}>", node.tag_name().name()))
        .and_then(elem_text)
}

fn req_attr<'a>(node: Node<'a, '_>, name: &str) -> ParseResult<&'a str> {
    node.attribute(name)
        .ok_or_else(|| format!("<{}> lacks attribute {name}", node.tag_name().name()))
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> ParseResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| format!("{what}: {e}"))
}

fn read_header_node(node: Node<'_, '_>) -> ParseResult<RunHeader> {
    let end_time = match child(node, "end_time") {
        Some(n) => Some(parse("end_time", &elem_text(n)?)?),
        None => None,
    };
    Ok(RunHeader {
        partition: req_text(node, "partition")?,
        run_number: parse("run_number", &req_text(node, "run_number")?)?,
        start_time: parse("start_time", &req_text(node, "start_time")?)?,
        end_time,
        status: parse("status", &req_text(node, "status")?)?,
        num_events: parse("num_events", &req_text(node, "num_events")?)?,
        max_events: parse("max_events", &req_text(node, "max_events")?)?,
        trigger_type: crate::model::TriggerType::new(&req_text(node, "trigger_type")?),
        beam_type: req_text(node, "beam_type")?,
        detector_mask: parse("detector_mask", &req_text(node, "detector_mask")?)?,
    })
}

fn read_mrs(node: Node<'_, '_>) -> ParseResult<StoredMrs> {
    Ok(StoredMrs {
        record_id: parse("mrs id", req_attr(node, "id")?)?,
        message: MrsMessage {
            message_name: req_text(node, "message_name")?,
            severity: parse("severity", req_attr(node, "severity")?)?,
            application: req_text(node, "application")?,
            text: req_text(node, "text")?,
            timestamp: parse("timestamp", req_attr(node, "timestamp")?)?,
            qualifiers: node
                .children()
                .filter(|c| c.has_tag_name("qualifier"))
                .map(elem_text)
                .collect::<ParseResult<_>>()?,
        },
    })
}

fn read_is(node: Node<'_, '_>) -> ParseResult<StoredIs> {
    let attributes = node
        .children()
        .filter(|c| c.has_tag_name("attr"))
        .map(|a| {
            let ty = req_attr(a, "type")?;
            let ty = ScalarType::parse(ty).ok_or_else(|| format!("unknown attr type {ty:?}"))?;
            let value = Scalar::from_text(ty, &elem_text(a)?).map_err(|e| e.to_string())?;
            Ok(Attribute::new(req_attr(a, "name")?, value))
        })
        .collect::<ParseResult<_>>()?;
    Ok(StoredIs {
        record_id: parse("is id", req_attr(node, "id")?)?,
        info: IsInfo {
            server: req_text(node, "server")?,
            object_name: req_text(node, "object_name")?,
            class_name: req_text(node, "class_name")?,
            attributes,
            timestamp: parse("timestamp", req_attr(node, "timestamp")?)?,
        },
    })
}

fn read_comment(node: Node<'_, '_>) -> ParseResult<Comment> {
    let attachments = node
        .children()
        .filter(|c| c.has_tag_name("attachment"))
        .map(|a| {
            Ok(Attachment {
                filename: req_attr(a, "filename")?.to_owned(),
                media_type: req_attr(a, "media_type")?.to_owned(),
                size_bytes: parse("size_bytes", req_attr(a, "size_bytes")?)?,
                digest: req_attr(a, "digest")?.to_owned(),
            })
        })
        .collect::<ParseResult<_>>()?;
    Ok(Comment {
        comment_id: parse("comment id", req_attr(node, "id")?)?,
        author: req_text(node, "author")?,
        created_at: parse("created_at", req_attr(node, "created_at")?)?,
        text: req_text(node, "text")?,
        origin: parse("origin", req_attr(node, "origin")?)?,
        attachments,
    })
}

fn check_root<'a, 'i>(doc: &'a Document<'i>) -> ParseResult<Node<'a, 'i>> {
    let root = doc.root_element();
    if !root.has_tag_name("run") || root.attribute("version") != Some("1") {
        return Err("not an obk run document (version 1)".into());
    }
    Ok(root)
}

/// Parses a complete run document. Records are returned in document order.
pub fn read_run(text: &str) -> ParseResult<RunDetail> {
    let doc = Document::parse(text).map_err(|e| e.to_string())?;
    let root = check_root(&doc)?;
    let header = child(root, "header").ok_or("missing <header>")?;
    let mut detail = RunDetail {
        header: read_header_node(header)?,
        mrs: Vec::new(),
        is: Vec::new(),
        comments: Vec::new(),
    };
    for node in root.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "header" => {}
            "mrs" => detail.mrs.push(read_mrs(node)?),
            "is" => detail.is.push(read_is(node)?),
            "comment" => detail.comments.push(read_comment(node)?),
            other => return Err(format!("unexpected element <{other}>")),
        }
    }
    Ok(detail)
}

/// Parses only the header, skipping the record section.
pub fn read_header(text: &str) -> ParseResult<RunHeader> {
    const END: &str = "</header>";
    let cut = text.find(END).ok_or("missing </header>")? + END.len();
    let prefix = format!("{}</run>", &text[..cut]);
    let doc = Document::parse(&prefix).map_err(|e| e.to_string())?;
    let root = check_root(&doc)?;
    read_header_node(child(root, "header").ok_or("missing <header>")?)
}
