use serde::{Deserialize, Serialize};

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn default_genres() -> Vec<String> {
    strings(&[
        "action", "adventure", "comedy", "documentary", "drama", "fantasy", "history", "horror", "mystery", "romance",
        "science fiction", "thriller",
    ])
}
fn default_themes() -> Vec<String> {
    strings(&[
        "coming of age", "discovery", "family", "friendship", "identity", "justice", "love", "power", "redemption",
        "survival",
    ])
}
fn default_keywords() -> Vec<String> {
    strings(&["adaptation", "award winning", "bestseller", "classic", "cult", "debut", "epic", "illustrated", "indie", "series"])
}
fn default_categories() -> Vec<String> {
    strings(&["education", "entertainment", "fiction", "lifestyle", "nonfiction", "reference"])
}
fn default_age_brackets() -> Vec<String> {
    strings(&["under 18", "18-24", "25-34", "35-44", "45-54", "55+"])
}
fn default_genders() -> Vec<String> {
    strings(&["female", "male", "unspecified"])
}
fn default_preference_tags() -> Vec<String> {
    let mut v = default_genres();
    v.extend(default_themes());
    v
}

/// Closed vocabularies for mock replies and profile validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabularies {
    #[serde(default = "default_genres")]
    pub genres: Vec<String>,
    #[serde(default = "default_themes")]
    pub themes: Vec<String>,
    #[serde(default = "default_keywords")]
    pub keywords: Vec<String>,
    #[serde(default = "default_categories")]
    pub categories: Vec<String>,
    #[serde(default = "default_age_brackets")]
    pub age_brackets: Vec<String>,
    #[serde(default = "default_genders")]
    pub genders: Vec<String>,
    #[serde(default = "default_preference_tags")]
    pub preference_tags: Vec<String>,
}

impl Default for Vocabularies {
    fn default() -> Self {
        Self {
            genres: default_genres(),
            themes: default_themes(),
            keywords: default_keywords(),
            categories: default_categories(),
            age_brackets: default_age_brackets(),
            genders: default_genders(),
            preference_tags: default_preference_tags(),
        }
    }
}

impl Vocabularies {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, list) in [
            ("genres", &self.genres),
            ("themes", &self.themes),
            ("keywords", &self.keywords),
            ("categories", &self.categories),
            ("age_brackets", &self.age_brackets),
            ("genders", &self.genders),
            ("preference_tags", &self.preference_tags),
        ] {
            if list.is_empty() {
                return Err(crate::Error::Config(format!("augment.vocab.{name} is empty")));
            }
        }
        Ok(())
    }
}
