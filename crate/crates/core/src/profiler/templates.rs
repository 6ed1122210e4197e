//! Relation templates that turn 1-hop and 2-hop facts into sentences.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProfileError;

const DEFAULT_TEMPLATES: &str = include_str!("default_templates.toml");

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Hop {
    /// `[ITEM] ... [ENTITY]`
    One,
    /// `[ENTITY] ... [ITEMS]`
    Two,
    /// Entity-side phrasing of a 1-hop fact.
    OneReversed,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Placeholder {
    Item,
    Entity,
    Items,
    Relation,
}

impl Placeholder {
    const ALL: [(Placeholder, &'static str); 4] = [
        (Placeholder::Items, "[ITEMS]"),
        (Placeholder::Item, "[ITEM]"),
        (Placeholder::Entity, "[ENTITY]"),
        (Placeholder::Relation, "[RELATION]"),
    ];

    fn token(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(p, _)| *p == self)
            .map(|(_, t)| *t)
            .unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationTemplates {
    pub one_hop: String,
    pub two_hop: String,
    pub one_hop_reversed: String,
}

impl RelationTemplates {
    fn get(&self, hop: Hop) -> &str {
        match hop {
            Hop::One => &self.one_hop,
            Hop::Two => &self.two_hop,
            Hop::OneReversed => &self.one_hop_reversed,
        }
    }
}

/// System instructions for each profiling stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instructions {
    pub item: String,
    pub auxiliary: String,
    pub user: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub instructions: Instructions,
    pub fallback: RelationTemplates,
    #[serde(default)]
    pub relations: BTreeMap<String, RelationTemplates>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(Placeholder),
}

fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    'outer: while !rest.is_empty() {
        let mut search_from = 0;
        while let Some(off) = rest[search_from..].find('[') {
            let at = search_from + off;
            for (p, token) in Placeholder::ALL {
                if rest[at..].starts_with(token) {
                    if at > 0 {
                        out.push(Segment::Text(&rest[..at]));
                    }
                    out.push(Segment::Slot(p));
                    rest = &rest[at + token.len()..];
                    continue 'outer;
                }
            }
            search_from = at + 1;
        }
        out.push(Segment::Text(rest));
        break;
    }
    out
}

fn count(template: &str, p: Placeholder) -> usize {
    segments(template)
        .iter()
        .filter(|s| matches!(s, Segment::Slot(q) if *q == p))
        .count()
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let set: TemplateSet =
            toml::from_str(text).map_err(|e| ProfileError::Templates(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template set serializes")
    }

    /// Every template must contain its required placeholders exactly once;
    /// `[RELATION]` may appear at most once.
    pub fn validate(&self) -> Result<(), ProfileError> {
        let check =
            |name: &str, t: &RelationTemplates| -> Result<(), ProfileError> {
                let rules = [
                    (
                        Hop::One,
                        [Placeholder::Item, Placeholder::Entity],
                        Placeholder::Items,
                    ),
                    (
                        Hop::Two,
                        [Placeholder::Entity, Placeholder::Items],
                        Placeholder::Item,
                    ),
                    (
                        Hop::OneReversed,
                        [Placeholder::Item, Placeholder::Entity],
                        Placeholder::Items,
                    ),
                ];
                for (hop, required, forbidden) in rules {
                    let text = t.get(hop);
                    let bad = required.iter().any(|&p| count(text, p) != 1)
                        || count(text, forbidden) != 0
                        || count(text, Placeholder::Relation) > 1;
                    if bad {
                        return Err(ProfileError::Templates(format!(
                        "relation `{name}` {hop:?} template `{text}` must contain {} exactly once",
                        required.iter().map(|p| p.token()).collect::<Vec<_>>().join(" and ")
                    )));
                    }
                }
                Ok(())
            };
        check("fallback", &self.fallback)?;
        for (name, t) in &self.relations {
            check(name, t)?;
        }
        Ok(())
    }

    pub fn has_relation(&self, relation: &str) -> bool {
        self.relations.contains_key(relation)
    }

    /// Renders one template. `items` is truncated to `max_items` and joined
    /// with `", "`. Relations without their own templates use the fallback.
    pub fn render(
        &self,
        relation: &str,
        hop: Hop,
        item: &str,
        entity: &str,
        items: &[&str],
        max_items: usize,
    ) -> Result<String, ProfileError> {
        let template = self
            .relations
            .get(relation)
            .unwrap_or(&self.fallback)
            .get(hop);
        let shown = &items[..items.len().min(max_items)];
        let mut out = String::with_capacity(template.len() + 32);
        for seg in segments(template) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(Placeholder::Item) => out.push_str(non_empty(item, "[ITEM]")?),
                Segment::Slot(Placeholder::Entity) => out.push_str(non_empty(entity, "[ENTITY]")?),
                Segment::Slot(Placeholder::Relation) => {
                    out.push_str(non_empty(relation, "[RELATION]")?)
                }
                Segment::Slot(Placeholder::Items) => {
                    if shown.is_empty() || shown.iter().any(|s| s.is_empty()) {
                        return Err(ProfileError::MissingLabel("[ITEMS]"));
                    }
                    out.push_str(&shown.join(", "));
                }
            }
        }
        Ok(out)
    }
}

fn non_empty<'a>(label: &'a str, slot: &'static str) -> Result<&'a str, ProfileError> {
    if label.is_empty() {
        Err(ProfileError::MissingLabel(slot))
    } else {
        Ok(label)
    }
}

/// Free-function form of [`TemplateSet::render`].
pub fn render_template(
    set: &TemplateSet,
    relation: &str,
    hop: Hop,
    item: &str,
    entity: &str,
    items: &[&str],
    max_items: usize,
) -> Result<String, ProfileError> {
    set.render(relation, hop, item, entity, items, max_items)
}
