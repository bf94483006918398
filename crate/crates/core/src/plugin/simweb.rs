//! `simweb`: twenty components that browse an in-memory fake website.
//! Tabs, history and form state live in the caller's per-session scratch
//! value, so sessions never see each other's navigation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComponentHandler, InvokeContext};
use crate::value::{Object, Value};

pub const COMPONENTS: [&str; 20] = [
    "open_page",
    "close_page",
    "switch_page",
    "list_pages",
    "get_url",
    "read_text",
    "read_links",
    "find_element",
    "extract_table",
    "click",
    "fill_input",
    "submit_form",
    "select_option",
    "scroll",
    "history_back",
    "history_forward",
    "wait_ticks",
    "set_header",
    "download_text",
    "eval_selector",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub pages: BTreeMap<String, Page>,
    #[serde(default)]
    pub downloads: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub title: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub tables: Vec<Table>,
    #[serde(default)]
    pub forms: Vec<Form>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub text: String,
    pub href: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    pub tag: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub href: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Form {
    pub id: String,
    pub action: String,
    pub fields: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(rename = "type", default = "text_type")]
    pub kind: String,
    #[serde(default)]
    pub options: Vec<String>,
}

fn text_type() -> String {
    "text".into()
}

impl Site {
    pub fn load(path: &Path) -> Result<Site, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Tab {
    history: Vec<String>,
    pos: usize,
    #[serde(default)]
    scroll: i64,
}

impl Tab {
    fn url(&self) -> &str {
        &self.history[self.pos]
    }

    fn navigate(&mut self, url: &str) {
        self.history.truncate(self.pos + 1);
        self.history.push(url.to_string());
        self.pos = self.history.len() - 1;
        self.scroll = 0;
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Scratch {
    #[serde(default)]
    tabs: Vec<Tab>,
    #[serde(default)]
    active: Option<usize>,
    #[serde(default)]
    forms: BTreeMap<String, BTreeMap<String, Value>>,
    #[serde(default)]
    headers: BTreeMap<String, String>,
    #[serde(default)]
    ticks: u64,
}

impl Scratch {
    fn from_value(v: &Value) -> Scratch {
        if v.is_null() {
            return Scratch::default();
        }
        serde_json::from_value(v.to_json()).unwrap_or_default()
    }

    fn to_value(&self) -> Value {
        Value::from_json(&serde_json::to_value(self).expect("scratch serializes"))
    }

    fn tab(&self) -> Result<&Tab, String> {
        self.active
            .and_then(|i| self.tabs.get(i))
            .ok_or_else(|| "no page is open".to_string())
    }

    fn tab_mut(&mut self) -> Result<&mut Tab, String> {
        match self.active {
            Some(i) if i < self.tabs.len() => Ok(&mut self.tabs[i]),
            _ => Err("no page is open".into()),
        }
    }
}

pub struct SimWeb {
    site: Site,
}

impl SimWeb {
    pub fn new(site: Site) -> SimWeb {
        SimWeb { site }
    }

    fn page(&self, url: &str) -> Result<&Page, String> {
        self.site
            .pages
            .get(url)
            .ok_or_else(|| format!("no page at `{url}`"))
    }

    fn page_value(&self, url: &str) -> Result<Value, String> {
        let p = self.page(url)?;
        Ok(Value::object([
            ("url", Value::from(url)),
            ("title", Value::from(p.title.as_str())),
            ("text", Value::from(p.text.as_str())),
        ]))
    }

    fn run(&self, component: &str, args: &Args<'_>, s: &mut Scratch) -> Result<Value, String> {
        match component {
            "open_page" => {
                let url = args.string("url")?;
                self.page(&url)?;
                s.tabs.push(Tab {
                    history: vec![url.clone()],
                    pos: 0,
                    scroll: 0,
                });
                s.active = Some(s.tabs.len() - 1);
                self.page_value(&url)
            }
            "close_page" => {
                let index = match args.opt_int("index")? {
                    Some(i) => i,
                    None => s.active.ok_or("no page is open")?,
                };
                if index >= s.tabs.len() {
                    return Err(format!("no tab {index}"));
                }
                s.tabs.remove(index);
                s.active = if s.tabs.is_empty() {
                    None
                } else {
                    Some(s.active.unwrap_or(0).min(s.tabs.len() - 1))
                };
                Ok(Value::object([("open", Value::from(s.tabs.len() as i64))]))
            }
            "switch_page" => {
                let index = args.int("index")?;
                if index >= s.tabs.len() {
                    return Err(format!("no tab {index}"));
                }
                s.active = Some(index);
                self.page_value(s.tab()?.url())
            }
            "list_pages" => {
                let mut out = Vec::new();
                for (i, tab) in s.tabs.iter().enumerate() {
                    out.push(Value::object([
                        ("index", Value::from(i as i64)),
                        ("url", Value::from(tab.url())),
                        ("title", Value::from(self.page(tab.url())?.title.as_str())),
                        ("active", Value::from(s.active == Some(i))),
                    ]));
                }
                Ok(Value::from(out))
            }
            "get_url" => Ok(Value::from(s.tab()?.url())),
            "read_text" => Ok(Value::from(self.page(s.tab()?.url())?.text.as_str())),
            "read_links" => {
                let page = self.page(s.tab()?.url())?;
                Ok(Value::from(page.links.iter().map(to_value).collect::<Vec<_>>()))
            }
            "find_element" => {
                let id = args.string("id")?;
                let page = self.page(s.tab()?.url())?;
                find(page, &id).ok_or_else(|| format!("no element `{id}`"))
            }
            "extract_table" => {
                let page = self.page(s.tab()?.url())?;
                let table = match args.opt_string("id")? {
                    Some(id) => page.tables.iter().find(|t| t.id == id),
                    None => page.tables.first(),
                };
                let table = table.ok_or("no such table")?;
                Ok(Value::object([
                    ("id", Value::from(table.id.as_str())),
                    (
                        "header",
                        Value::from(table.header.iter().map(|h| Value::from(h.as_str())).collect::<Vec<_>>()),
                    ),
                    (
                        "rows",
                        Value::from(table.rows.iter().map(|r| Value::from(r.clone())).collect::<Vec<_>>()),
                    ),
                ]))
            }
            "click" => {
                let id = args.string("id")?;
                let page = self.page(s.tab()?.url())?;
                let href = if let Some(link) = page.links.iter().find(|l| l.id == id) {
                    Some(link.href.clone())
                } else if let Some(el) = page.elements.iter().find(|e| e.id == id) {
                    el.href.clone()
                } else {
                    return Err(format!("no element `{id}`"));
                };
                match href {
                    Some(url) => {
                        self.page(&url)?;
                        s.tab_mut()?.navigate(&url);
                        self.page_value(&url)
                    }
                    None => Ok(Value::object([("clicked", Value::from(id.as_str()))])),
                }
            }
            "fill_input" | "select_option" => {
                let form_id = args.string("form")?;
                let field_name = args.string("field")?;
                let key = if component == "fill_input" { "value" } else { "option" };
                let value = args.get(key).cloned().ok_or(format!("missing `{key}`"))?;
                let page = self.page(s.tab()?.url())?;
                let form = page
                    .forms
                    .iter()
                    .find(|f| f.id == form_id)
                    .ok_or_else(|| format!("no form `{form_id}`"))?;
                let field = form
                    .fields
                    .iter()
                    .find(|f| f.name == field_name)
                    .ok_or_else(|| format!("no field `{field_name}` in `{form_id}`"))?;
                if component == "select_option" {
                    let choice = value.as_str().ok_or("option must be a string")?;
                    if field.kind != "select" || !field.options.iter().any(|o| o == choice) {
                        return Err(format!("`{choice}` is not an option of `{field_name}`"));
                    }
                }
                s.forms
                    .entry(form_id.clone())
                    .or_default()
                    .insert(field_name.clone(), value.clone());
                Ok(Value::object([
                    ("form", Value::from(form_id.as_str())),
                    ("field", Value::from(field_name.as_str())),
                    ("value", value),
                ]))
            }
            "submit_form" => {
                let form_id = args.string("form")?;
                let page = self.page(s.tab()?.url())?;
                let form = page
                    .forms
                    .iter()
                    .find(|f| f.id == form_id)
                    .ok_or_else(|| format!("no form `{form_id}`"))?;
                let action = form.action.clone();
                self.page(&action)?;
                let values = s.forms.remove(&form_id).unwrap_or_default();
                s.tab_mut()?.navigate(&action);
                let mut out = self.page_value(&action)?;
                if let Value::Object(map) = &mut out {
                    map.insert(
                        "submitted".into(),
                        Value::Object(values.into_iter().collect()),
                    );
                }
                Ok(out)
            }
            "scroll" => {
                let by = args.opt_number("by")?.unwrap_or(1.0) as i64;
                let tab = s.tab_mut()?;
                tab.scroll = (tab.scroll + by).max(0);
                Ok(Value::object([("scroll", Value::from(tab.scroll))]))
            }
            "history_back" | "history_forward" => {
                let tab = s.tab_mut()?;
                if component == "history_back" {
                    if tab.pos == 0 {
                        return Err("no earlier page in history".into());
                    }
                    tab.pos -= 1;
                } else {
                    if tab.pos + 1 >= tab.history.len() {
                        return Err("no later page in history".into());
                    }
                    tab.pos += 1;
                }
                let url = tab.url().to_string();
                self.page_value(&url)
            }
            "wait_ticks" => {
                let n = args.opt_number("ticks")?.unwrap_or(1.0).max(0.0) as u64;
                s.ticks += n;
                Ok(Value::object([("ticks", Value::from(s.ticks as i64))]))
            }
            "set_header" => {
                let name = args.string("name")?;
                let value = args.string("value")?;
                s.headers.insert(name, value);
                Ok(Value::Object(
                    s.headers
                        .iter()
                        .map(|(k, v)| (k.clone(), Value::from(v.as_str())))
                        .collect(),
                ))
            }
            "download_text" => {
                let href = args.string("href")?;
                self.site
                    .downloads
                    .get(&href)
                    .map(|t| Value::from(t.as_str()))
                    .ok_or_else(|| format!("nothing to download at `{href}`"))
            }
            "eval_selector" => {
                let selector = args.string("selector")?;
                let page = self.page(s.tab()?.url())?;
                Ok(Value::from(select(page, &selector)))
            }
            other => Err(format!("simweb has no component `{other}`")),
        }
    }
}

fn to_value<T: Serialize>(item: &T) -> Value {
    Value::from_json(&serde_json::to_value(item).expect("fixture serializes"))
}

fn find(page: &Page, id: &str) -> Option<Value> {
    if let Some(l) = page.links.iter().find(|l| l.id == id) {
        let mut v = to_value(l);
        if let Value::Object(m) = &mut v {
            m.insert("tag".into(), Value::from("a"));
        }
        return Some(v);
    }
    if let Some(e) = page.elements.iter().find(|e| e.id == id) {
        return Some(to_value(e));
    }
    if let Some(t) = page.tables.iter().find(|t| t.id == id) {
        return Some(Value::object([("id", Value::from(t.id.as_str())), ("tag", Value::from("table"))]));
    }
    page.forms
        .iter()
        .find(|f| f.id == id)
        .map(|f| Value::object([("id", Value::from(f.id.as_str())), ("tag", Value::from("form"))]))
}

/// Tiny selector language: `#id`, `a`, `table`, `form`, `h1`, or any
/// element tag.
fn select(page: &Page, selector: &str) -> Vec<Value> {
    if let Some(id) = selector.strip_prefix('#') {
        return find(page, id).into_iter().collect();
    }
    match selector {
        "a" => page.links.iter().map(to_value).collect(),
        "h1" | "title" => vec![Value::from(page.title.as_str())],
        "table" => page.tables.iter().map(|t| Value::from(t.id.as_str())).collect(),
        "form" => page.forms.iter().map(|f| Value::from(f.id.as_str())).collect(),
        tag => page
            .elements
            .iter()
            .filter(|e| e.tag == tag)
            .map(to_value)
            .collect(),
    }
}

/// Arguments come from config first, then from an object payload; a bare
/// string payload stands in for the primary string argument.
struct Args<'a> {
    config: &'a Object,
    input: &'a Value,
}

impl Args<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.config.get(key).or_else(|| self.input.get(key))
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>, String> {
        match self.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(format!("`{key}` must be a string, found {}", other.type_name())),
        }
    }

    fn string(&self, key: &str) -> Result<String, String> {
        if let Some(s) = self.opt_string(key)? {
            return Ok(s);
        }
        match self.input {
            Value::String(s) => Ok(s.clone()),
            _ => Err(format!("missing `{key}`")),
        }
    }

    fn opt_number(&self, key: &str) -> Result<Option<f64>, String> {
        match self.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(Some(*n)),
            Some(other) => Err(format!("`{key}` must be a number, found {}", other.type_name())),
        }
    }

    fn opt_int(&self, key: &str) -> Result<Option<usize>, String> {
        match self.opt_number(key)? {
            None => Ok(None),
            Some(n) if n >= 0.0 && n.fract() == 0.0 => Ok(Some(n as usize)),
            Some(n) => Err(format!("`{key}` must be a non-negative integer, found {n}")),
        }
    }

    fn int(&self, key: &str) -> Result<usize, String> {
        if let Some(n) = self.opt_int(key)? {
            return Ok(n);
        }
        match self.input {
            Value::Number(n) if *n >= 0.0 && n.fract() == 0.0 => Ok(*n as usize),
            _ => Err(format!("missing `{key}`")),
        }
    }
}

impl ComponentHandler for SimWeb {
    fn invoke(
        &self,
        component: &str,
        config: &Object,
        input: &Value,
        ctx: &mut InvokeContext<'_>,
    ) -> Result<Value, String> {
        let mut scratch = Scratch::from_value(ctx.scratch);
        let args = Args { config, input };
        let out = self.run(component, &args, &mut scratch)?;
        *ctx.scratch = scratch.to_value();
        Ok(out)
    }
}
