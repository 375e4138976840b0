/// Splits source code into lowercase subtokens.
///
/// Non-alphanumeric characters separate tokens; inside a run, camelCase
/// humps, acronym boundaries (`XMLParser` → `xml`, `parser`) and
/// letter/digit boundaries also split. Digit runs stay whole.
pub fn tokenize_code(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in raw.split(|c: char| !c.is_alphanumeric()) {
        split_identifier(word, &mut out);
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Lower,
    Upper,
    Digit,
}

fn class(c: char) -> Class {
    if c.is_numeric() {
        Class::Digit
    } else if c.is_uppercase() {
        Class::Upper
    } else {
        Class::Lower
    }
}

fn split_identifier(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = class(chars[i - 1]);
        let cur = class(chars[i]);
        let boundary = match (prev, cur) {
            (Class::Digit, Class::Digit) => false,
            (Class::Digit, _) | (_, Class::Digit) => true,
            (Class::Lower, Class::Upper) => true,
            // "XMLParser": split before the 'P' that starts a lowercase run
            (Class::Upper, Class::Upper) => {
                chars.get(i + 1).is_some_and(|&n| class(n) == Class::Lower)
            }
            _ => false,
        };
        if boundary {
            push_lower(&chars[start..i], out);
            start = i;
        }
    }
    push_lower(&chars[start..], out);
}

fn push_lower(chars: &[char], out: &mut Vec<String>) {
    if !chars.is_empty() {
        out.push(chars.iter().collect::<String>().to_lowercase());
    }
}

/// First sentence of a comment, lowercased and split on whitespace and
/// punctuation.
pub fn tokenize_comment(raw: &str) -> Vec<String> {
    let first = raw.split(['.', '!', '?']).next().unwrap_or_default();
    first
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn code_examples() {
        assert_eq!(
            tokenize_code("getFooBar(x_val)"),
            toks(&["get", "foo", "bar", "x", "val"])
        );
        assert_eq!(tokenize_code(""), Vec::<String>::new());
        assert_eq!(tokenize_code("a+b2"), toks(&["a", "b", "2"]));
    }

    #[test]
    fn code_acronyms_and_digits() {
        assert_eq!(
            tokenize_code("parseXMLFile"),
            toks(&["parse", "xml", "file"])
        );
        assert_eq!(
            tokenize_code("x = 100 + utf8"),
            toks(&["x", "100", "utf", "8"])
        );
        assert_eq!(tokenize_code("HTTP"), toks(&["http"]));
    }

    #[test]
    fn comment_examples() {
        assert_eq!(
            tokenize_comment("Deletes the file. Returns true."),
            toks(&["deletes", "the", "file"])
        );
        assert_eq!(tokenize_comment("returns X"), toks(&["returns", "x"]));
        assert!(tokenize_comment("  ").is_empty());
        assert_eq!(
            tokenize_comment("Is it empty? Yes"),
            toks(&["is", "it", "empty"])
        );
        assert_eq!(
            tokenize_comment("gets the (cached) value, maybe"),
            toks(&["gets", "the", "cached", "value", "maybe"])
        );
    }
}
