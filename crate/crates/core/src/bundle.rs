//! Bundle documents: the only executable and deployable unit.
//!
//! ```text
//! BUNDLE > { AUTHENTICATION@entity@signature,
//!            CODE@entry@type > CLASS@name*,
//!            DATA > DATUM@id* }
//! ```
//!
//! A [`Bundle`] is passive. Nothing in this module executes or signs code.
//! Datum content is kept as a document fragment, so bundles nested inside a
//! payload survive untouched until a tool asks for them with
//! [`Datum::as_bundle`].

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::guid::{compute_guid, DigestAlgorithm, Guid};
use crate::xml::{Element, Node};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BundleError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("datum not found: {0}")]
    DatumNotFound(String),
}

/// Name of a signing entity as it appears in `AUTHENTICATION@entity`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Result<EntityId, BundleError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(BundleError::SchemaViolation("entity id is empty".into()));
        }
        Ok(EntityId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Authentication {
    pub entity: EntityId,
    /// Base64 signature text, kept verbatim.
    pub signature: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeUnit {
    pub name: String,
    /// Base64 blob, opaque here.
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSection {
    pub entry: String,
    pub code_type: String,
    pub units: Vec<CodeUnit>,
}

impl CodeSection {
    pub fn to_element(&self) -> Element {
        let mut code = Element::new("CODE")
            .attr("entry", &self.entry)
            .attr("type", &self.code_type);
        for unit in &self.units {
            code = code.child(Element::new("CLASS").attr("name", &unit.name).text(&unit.content));
        }
        code
    }

    /// Canonical bytes of the CODE element; this is what signatures cover.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.to_element().to_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datum {
    pub id: String,
    pub content: Vec<Node>,
}

impl Datum {
    pub fn text(id: impl Into<String>, value: impl Into<String>) -> Datum {
        let value = value.into();
        let value = value.trim();
        let content = if value.is_empty() {
            Vec::new()
        } else {
            vec![Node::Text(value.to_string())]
        };
        Datum { id: id.into(), content }
    }

    pub fn element(id: impl Into<String>, el: Element) -> Datum {
        Datum {
            id: id.into(),
            content: vec![Node::Element(el)],
        }
    }

    pub fn bundle(id: impl Into<String>, bundle: &Bundle) -> Datum {
        Datum::element(id, bundle.to_element())
    }

    /// Trimmed text content of the datum.
    pub fn text_value(&self) -> String {
        let mut out = String::new();
        for n in &self.content {
            if let Node::Text(t) = n {
                out.push_str(t);
            }
        }
        out.trim().to_string()
    }

    /// First element in the datum content.
    pub fn first_element(&self) -> Option<&Element> {
        self.content.iter().find_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    /// Re-parses a nested bundle carried in this datum.
    pub fn as_bundle(&self) -> Result<Bundle, BundleError> {
        let el = self
            .first_element()
            .filter(|e| e.name == "BUNDLE")
            .ok_or_else(|| {
                BundleError::SchemaViolation(format!("datum {} does not carry a bundle", self.id))
            })?;
        Bundle::from_element(el)
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("DATUM").attr("id", &self.id);
        el.children = self.content.clone();
        el
    }

    pub fn from_element(el: &Element) -> Result<Datum, BundleError> {
        if el.name != "DATUM" {
            return Err(schema(format!("expected DATUM, found {}", el.name)));
        }
        Ok(Datum {
            id: el.required_attr("id").map_err(schema)?.to_string(),
            content: el.children.clone(),
        })
    }
}

/// A bundle without (or ignoring) its AUTHENTICATION element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleDraft {
    pub code: CodeSection,
    pub data: Vec<Datum>,
}

impl BundleDraft {
    pub fn new(code: CodeSection) -> Self {
        BundleDraft {
            code,
            data: Vec::new(),
        }
    }

    pub fn with_datum(mut self, datum: Datum) -> Self {
        self.data.push(datum);
        self
    }

    /// Parses a document that may or may not carry AUTHENTICATION.
    pub fn parse(doc: &[u8]) -> Result<BundleDraft, BundleError> {
        let root = Element::parse(doc).map_err(|e| BundleError::MalformedDocument(e.0))?;
        let (_, code, data) = parse_parts(&root)?;
        Ok(BundleDraft { code, data })
    }

    pub fn authenticate(self, auth: Authentication) -> Bundle {
        Bundle {
            auth,
            code: self.code,
            data: self.data,
        }
    }
}

impl From<Bundle> for BundleDraft {
    fn from(b: Bundle) -> Self {
        BundleDraft {
            code: b.code,
            data: b.data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub auth: Authentication,
    pub code: CodeSection,
    pub data: Vec<Datum>,
}

impl Bundle {
    pub fn parse(doc: &[u8]) -> Result<Bundle, BundleError> {
        let root = Element::parse(doc).map_err(|e| BundleError::MalformedDocument(e.0))?;
        Bundle::from_element(&root)
    }

    pub fn from_element(root: &Element) -> Result<Bundle, BundleError> {
        let (auth, code, data) = parse_parts(root)?;
        let auth = auth.ok_or_else(|| schema("BUNDLE lacks AUTHENTICATION"))?;
        Ok(Bundle { auth, code, data })
    }

    pub fn to_element(&self) -> Element {
        let mut data = Element::new("DATA");
        for d in &self.data {
            data = data.child(d.to_element());
        }
        Element::new("BUNDLE")
            .child(
                Element::new("AUTHENTICATION")
                    .attr("entity", self.auth.entity.as_str())
                    .attr("signature", &self.auth.signature),
            )
            .child(self.code.to_element())
            .child(data)
    }

    /// Canonical document bytes.
    pub fn serialize(&self) -> Vec<u8> {
        self.to_element().to_bytes()
    }

    pub fn guid(&self, algorithm: DigestAlgorithm) -> Guid {
        compute_guid(algorithm, &self.serialize())
    }

    pub fn datum(&self, id: &str) -> Result<&Datum, BundleError> {
        self.data
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| BundleError::DatumNotFound(id.to_string()))
    }

    pub fn entity(&self) -> &EntityId {
        &self.auth.entity
    }
}

pub fn parse_bundle(doc: &[u8]) -> Result<Bundle, BundleError> {
    Bundle::parse(doc)
}

pub fn serialize_bundle(b: &Bundle) -> Vec<u8> {
    b.serialize()
}

pub fn get_datum<'a>(b: &'a Bundle, id: &str) -> Result<&'a Datum, BundleError> {
    b.datum(id)
}

fn schema(msg: impl Into<String>) -> BundleError {
    BundleError::SchemaViolation(msg.into())
}

type Parts = (Option<Authentication>, CodeSection, Vec<Datum>);

fn parse_parts(root: &Element) -> Result<Parts, BundleError> {
    if root.name != "BUNDLE" {
        return Err(schema(format!("root element is {}, expected BUNDLE", root.name)));
    }
    let mut auth = None;
    let mut code = None;
    let mut data = None;
    for child in &root.children {
        let el = match child {
            Node::Element(e) => e,
            Node::Text(_) => return Err(schema("stray text inside BUNDLE")),
        };
        match el.name.as_str() {
            "AUTHENTICATION" if auth.is_none() => {
                let entity = el.required_attr("entity").map_err(schema)?;
                let signature = el.required_attr("signature").map_err(schema)?;
                auth = Some(Authentication {
                    entity: EntityId::new(entity)?,
                    signature: signature.to_string(),
                });
            }
            "CODE" if code.is_none() => code = Some(parse_code(el)?),
            "DATA" if data.is_none() => data = Some(parse_data(el)?),
            other => return Err(schema(format!("unexpected or repeated element {other} in BUNDLE"))),
        }
    }
    let code = code.ok_or_else(|| schema("BUNDLE lacks CODE"))?;
    Ok((auth, code, data.unwrap_or_default()))
}

fn parse_code(el: &Element) -> Result<CodeSection, BundleError> {
    let entry = el.required_attr("entry").map_err(schema)?.to_string();
    let code_type = el.required_attr("type").map_err(schema)?.to_string();
    let mut seen = HashSet::new();
    let mut units = Vec::new();
    for child in &el.children {
        let Node::Element(class) = child else {
            return Err(schema("stray text inside CODE"));
        };
        if class.name != "CLASS" {
            return Err(schema(format!("unexpected element {} in CODE", class.name)));
        }
        let name = class.required_attr("name").map_err(schema)?.to_string();
        if !seen.insert(name.clone()) {
            return Err(schema(format!("duplicate code unit {name}")));
        }
        if class.elements().next().is_some() {
            return Err(schema(format!("CLASS {name} must hold text only")));
        }
        units.push(CodeUnit {
            name,
            content: class.text_content(),
        });
    }
    Ok(CodeSection {
        entry,
        code_type,
        units,
    })
}

fn parse_data(el: &Element) -> Result<Vec<Datum>, BundleError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for child in &el.children {
        let Node::Element(d) = child else {
            return Err(schema("stray text inside DATA"));
        };
        if d.name != "DATUM" {
            return Err(schema(format!("unexpected element {} in DATA", d.name)));
        }
        let id = d.required_attr("id").map_err(schema)?.to_string();
        if !seen.insert(id.clone()) {
            return Err(schema(format!("duplicate datum id {id}")));
        }
        out.push(Datum {
            id,
            content: d.children.clone(),
        });
    }
    Ok(out)
}
