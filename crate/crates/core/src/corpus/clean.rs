use regex::Regex;

use crate::error::{CoreError, Result};

/// Ordered regex substitutions applied to raw lyrics.
#[derive(Clone, Debug)]
pub struct Cleaner {
    rules: Vec<(Regex, String)>,
}

const COMMON_RULES: &str = r"(?m)^\s*\[[a-z]+:.*\]\s*$	
\[\d{1,2}:\d{2}(?:[.:]\d{1,3})?\]	
\(\d{1,2}:\d{2}\)	
(?im)^\s*(?:composer|lyricist|lyrics|lyrics by|music|music by|arranger|producer|written by|作词|作曲|编曲|制作人)\s*[:：].*$	
(?i)\b(?:repeat|chorus|verse|bridge|intro|outro)\s*(?:x\d+|\d+)?\s*:	
[\r\t]+	 
";

const EN_RULES: &str = r"[^\p{L}\p{N}\s|'\n-]+	 
(?:^|\s)['-]+|['-]+(?:\s|$)	 
[ ]{2,}	 
";

const ZH_RULES: &str = r"[^\p{Han}\p{L}\p{N}\s|\n]+	 
(\p{Han})	 $1 
[ ]{2,}	 
";

impl Cleaner {
    /// Parses `pattern<TAB>replacement` lines.
    pub fn parse(table: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for line in table.lines() {
            if line.trim().is_empty() || line.starts_with("##") {
                continue;
            }
            let (pat, rep) = line.split_once('\t').unwrap_or((line, ""));
            let re = Regex::new(pat).map_err(|e| CoreError::Format(format!("cleaning rule {pat:?}: {e}")))?;
            rules.push((re, rep.to_string()));
        }
        Ok(Cleaner { rules })
    }

    /// Built-in table for a language tag (`en`, `zh`, anything else gets
    /// the English punctuation rules).
    pub fn for_language(lang: &str) -> Self {
        let specific = match lang {
            "zh" | "cmn" => ZH_RULES,
            _ => EN_RULES,
        };
        Self::parse(&format!("{COMMON_RULES}{specific}")).expect("built-in cleaning rules compile")
    }

    /// Applies every rule, lowercases, trims lines and drops empty ones.
    pub fn clean(&self, text: &str) -> String {
        let mut s = text.to_string();
        for (re, rep) in &self.rules {
            s = re.replace_all(&s, rep.as_str()).into_owned();
        }
        s.to_lowercase()
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }
}
