//! To-do lists (a tool's work order) and task reports (its answer).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::bundle::{BundleError, Datum};
use crate::connector::Connector;
use crate::xml::Element;

pub const TODO_DATUM: &str = "ToDoList";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskType {
    Install,
    Run,
    Wire,
}

impl TaskType {
    pub fn name(self) -> &'static str {
        match self {
            TaskType::Install => "INSTALL",
            TaskType::Run => "RUN",
            TaskType::Wire => "WIRE",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskType {
    type Err = BundleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "INSTALL" => Ok(TaskType::Install),
            "RUN" => Ok(TaskType::Run),
            "WIRE" => Ok(TaskType::Wire),
            other => Err(BundleError::SchemaViolation(format!("unknown task type {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    /// Kept as written; reference documents use ids that are not hex digests.
    pub guid: String,
    pub task_type: TaskType,
    pub datums: Vec<Datum>,
}

impl Task {
    pub fn new(guid: impl Into<String>, task_type: TaskType) -> Self {
        Task {
            guid: guid.into(),
            task_type,
            datums: Vec::new(),
        }
    }

    pub fn with_datum(mut self, d: Datum) -> Self {
        self.datums.push(d);
        self
    }

    pub fn datum(&self, id: &str) -> Result<&Datum, BundleError> {
        self.datums
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| BundleError::DatumNotFound(id.to_string()))
    }

    pub fn text(&self, id: &str) -> Result<String, BundleError> {
        self.datum(id).map(Datum::text_value)
    }

    pub fn connector(&self, id: &str) -> Result<Connector, BundleError> {
        let el = self
            .datum(id)?
            .first_element()
            .filter(|e| e.name == "CONNECTOR")
            .ok_or_else(|| BundleError::SchemaViolation(format!("datum {id} holds no CONNECTOR")))?;
        Connector::from_element(el).map_err(|e| BundleError::SchemaViolation(e.to_string()))
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("TASK")
            .attr("guid", &self.guid)
            .attr("type", self.task_type.name());
        for d in &self.datums {
            el = el.child(d.to_element());
        }
        el
    }

    pub fn from_element(el: &Element) -> Result<Task, BundleError> {
        let schema = BundleError::SchemaViolation;
        if el.name != "TASK" {
            return Err(schema(format!("expected TASK, found {}", el.name)));
        }
        let guid = el.required_attr("guid").map_err(schema)?;
        if guid.trim().is_empty() {
            return Err(schema("empty task guid".into()));
        }
        Ok(Task {
            guid: guid.to_string(),
            task_type: el.required_attr("type").map_err(schema)?.parse()?,
            datums: el
                .elements()
                .map(Datum::from_element)
                .collect::<Result<_, _>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ToDoList {
    pub tasks: Vec<Task>,
}

impl ToDoList {
    pub fn new(tasks: Vec<Task>) -> Result<Self, BundleError> {
        let mut seen = HashSet::new();
        for t in &tasks {
            if !seen.insert(t.guid.as_str()) {
                return Err(BundleError::SchemaViolation(format!("duplicate task guid {}", t.guid)));
            }
        }
        Ok(ToDoList { tasks })
    }

    pub fn to_element(&self) -> Element {
        self.tasks
            .iter()
            .fold(Element::new("TODOLIST"), |el, t| el.child(t.to_element()))
    }

    pub fn from_element(el: &Element) -> Result<Self, BundleError> {
        if el.name != "TODOLIST" {
            return Err(BundleError::SchemaViolation(format!("expected TODOLIST, found {}", el.name)));
        }
        ToDoList::new(el.elements().map(Task::from_element).collect::<Result<_, _>>()?)
    }

    /// The list carried in a bundle's `ToDoList` datum.
    pub fn from_datum(d: &Datum) -> Result<Self, BundleError> {
        let el = d
            .first_element()
            .ok_or_else(|| BundleError::SchemaViolation(format!("datum {} holds no TODOLIST", d.id)))?;
        ToDoList::from_element(el)
    }

    pub fn to_datum(&self) -> Datum {
        Datum::element(TODO_DATUM, self.to_element())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskResult {
    pub guid: String,
    pub status: TaskStatus,
    pub info: Vec<(String, String)>,
}

impl TaskResult {
    pub fn ok(guid: impl Into<String>) -> Self {
        TaskResult {
            guid: guid.into(),
            status: TaskStatus::Ok,
            info: Vec::new(),
        }
    }

    /// Failed result; the error is recorded as `Code: detail` under `error`.
    pub fn failed(guid: impl Into<String>, code: &str, detail: &str) -> Self {
        TaskResult {
            guid: guid.into(),
            status: TaskStatus::Failed,
            info: vec![("error".into(), format!("{code}: {detail}"))],
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.info.push((key.into(), value.into()));
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == TaskStatus::Ok
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.info.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn error(&self) -> Option<&str> {
        self.get("error")
    }

    /// Connector reported by a runner.
    pub fn connector(&self) -> Option<Connector> {
        let host = self.get("Host")?;
        let mp = self.get("MachinePort")?.parse().ok()?;
        let rp = self.get("ResourcePort")?.parse().ok()?;
        Connector::new(host, mp, rp).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskReport {
    pub results: Vec<TaskResult>,
}

impl TaskReport {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(TaskResult::is_ok)
    }

    pub fn first_failure(&self) -> Option<&TaskResult> {
        self.results.iter().find(|r| !r.is_ok())
    }

    pub fn result(&self, guid: &str) -> Option<&TaskResult> {
        self.results.iter().find(|r| r.guid == guid)
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("TASKREPORT");
        for r in &self.results {
            let mut t = Element::new("TASKRESULT").attr("guid", &r.guid).attr(
                "status",
                match r.status {
                    TaskStatus::Ok => "OK",
                    TaskStatus::Failed => "FAILED",
                },
            );
            for (k, v) in &r.info {
                t = t.child(Element::new("INFO").attr("key", k).text(v.as_str()));
            }
            el = el.child(t);
        }
        el
    }

    pub fn from_element(el: &Element) -> Result<Self, BundleError> {
        let schema = BundleError::SchemaViolation;
        if el.name != "TASKREPORT" {
            return Err(schema(format!("expected TASKREPORT, found {}", el.name)));
        }
        let mut results = Vec::new();
        for t in el.elements_named("TASKRESULT") {
            let status = match t.required_attr("status").map_err(schema)? {
                "OK" => TaskStatus::Ok,
                "FAILED" => TaskStatus::Failed,
                other => return Err(schema(format!("unknown task status {other}"))),
            };
            let info = t
                .elements_named("INFO")
                .map(|i| Ok((i.required_attr("key").map_err(schema)?.to_string(), i.text_content())))
                .collect::<Result<_, BundleError>>()?;
            results.push(TaskResult {
                guid: t.required_attr("guid").map_err(schema)?.to_string(),
                status,
                info,
            });
        }
        Ok(TaskReport { results })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_element().to_bytes()
    }

    pub fn parse(doc: &[u8]) -> Result<Self, BundleError> {
        let el = Element::parse(doc).map_err(|e| BundleError::MalformedDocument(e.0))?;
        TaskReport::from_element(&el)
    }
}

impl fmt::Display for TaskReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.results.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let status = if r.is_ok() { "OK" } else { "FAILED" };
            write!(f, "{} {}", r.guid, status)?;
            if let Some(e) = r.error() {
                write!(f, " ({e})")?;
            }
        }
        Ok(())
    }
}
