use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};

pub const CLASS_PLACEHOLDER: &str = "{class_name}";
pub const DEFAULT_POSITIVE: &str = "oil painting of {class_name} on canvas";
pub const DEFAULT_NEGATIVE: &str = "bad anatomy, bad structure";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub positive: String,
    pub negative: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate { positive: DEFAULT_POSITIVE.into(), negative: DEFAULT_NEGATIVE.into() }
    }
}

impl PromptTemplate {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate { positive: positive.into(), negative: negative.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.positive.contains(CLASS_PLACEHOLDER) {
            return Err(Error::MissingPlaceholder);
        }
        Ok(())
    }

    /// `(positive, negative)` prompts for one class name.
    pub fn render(&self, class_name: &str) -> Result<(String, String)> {
        self.validate()?;
        if class_name.trim().is_empty() {
            return Err(Error::EmptyCategoryName);
        }
        Ok((self.positive.replace(CLASS_PLACEHOLDER, class_name), self.negative.clone()))
    }
}

pub fn prompt_for(category: &Category, template: &PromptTemplate) -> Result<(String, String)> {
    template.render(&category.name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(name: &str) -> Category {
        Category { id: 1, name: name.into() }
    }

    #[test]
    fn renders_class_prompts() {
        let t = PromptTemplate::default();
        assert_eq!(prompt_for(&cat("rose"), &t).unwrap().0, "oil painting of rose on canvas");
        let (pos, neg) = prompt_for(&cat("lobster"), &t).unwrap();
        assert_eq!(pos, "oil painting of lobster on canvas");
        assert_eq!(neg, "bad anatomy, bad structure");
    }

    #[test]
    fn rejects_empty_name_and_missing_placeholder() {
        assert!(matches!(prompt_for(&cat(""), &PromptTemplate::default()), Err(Error::EmptyCategoryName)));
        assert!(matches!(PromptTemplate::new("oil painting", "x"), Err(Error::MissingPlaceholder)));
    }
}
