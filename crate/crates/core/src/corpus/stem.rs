//! Porter suffix-stripping stemmer (steps 1–5), following the reference C
//! implementation including its `bli → ble` and `logi → log` rules.
//! Words of one or two letters, and words with non-ASCII-lowercase bytes,
//! are returned unchanged.

struct Word {
    b: Vec<u8>,
    /// Length of the live word; `b[end..]` is scratch.
    end: usize,
    /// Stem length before the suffix matched by the last successful `ends`.
    j: usize,
}

impl Word {
    fn cons(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.cons(i - 1),
            _ => true,
        }
    }

    /// Number of VC sequences in `b[..j]`.
    fn m(&self) -> usize {
        let j = self.j;
        let mut n = 0;
        let mut i = 0;
        loop {
            if i >= j {
                return n;
            }
            if !self.cons(i) {
                break;
            }
            i += 1;
        }
        i += 1;
        loop {
            loop {
                if i >= j {
                    return n;
                }
                if self.cons(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
            n += 1;
            loop {
                if i >= j {
                    return n;
                }
                if !self.cons(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
        }
    }

    fn vowel_in_stem(&self) -> bool {
        (0..self.j).any(|i| !self.cons(i))
    }

    fn double_cons(&self, i: usize) -> bool {
        i >= 1 && self.b[i] == self.b[i - 1] && self.cons(i)
    }

    /// consonant-vowel-consonant ending at `i`, last not w, x or y.
    fn cvc(&self, i: usize) -> bool {
        if i < 2 || !self.cons(i) || self.cons(i - 1) || !self.cons(i - 2) {
            return false;
        }
        !matches!(self.b[i], b'w' | b'x' | b'y')
    }

    fn ends(&mut self, s: &str) -> bool {
        let s = s.as_bytes();
        if s.len() > self.end || &self.b[self.end - s.len()..self.end] != s {
            return false;
        }
        self.j = self.end - s.len();
        true
    }

    fn set_to(&mut self, s: &str) {
        self.b.truncate(self.j);
        self.b.extend_from_slice(s.as_bytes());
        self.end = self.b.len();
    }

    fn replace_if_measure(&mut self, s: &str) {
        if self.m() > 0 {
            self.set_to(s);
        }
    }

    fn last(&self) -> u8 {
        self.b[self.end - 1]
    }

    fn step1ab(&mut self) {
        if self.last() == b's' {
            if self.ends("sses") {
                self.end -= 2;
            } else if self.ends("ies") {
                self.set_to("i");
            } else if self.end >= 2 && self.b[self.end - 2] != b's' {
                self.end -= 1;
            }
        }
        if self.ends("eed") {
            if self.m() > 0 {
                self.end -= 1;
            }
        } else if (self.ends("ed") || self.ends("ing")) && self.vowel_in_stem() {
            self.end = self.j;
            if self.ends("at") {
                self.set_to("ate");
            } else if self.ends("bl") {
                self.set_to("ble");
            } else if self.ends("iz") {
                self.set_to("ize");
            } else if self.double_cons(self.end - 1) {
                self.end -= 1;
                if matches!(self.last(), b'l' | b's' | b'z') {
                    self.end += 1;
                }
            } else {
                self.j = self.end;
                if self.m() == 1 && self.cvc(self.end - 1) {
                    self.set_to("e");
                }
            }
        }
    }

    fn step1c(&mut self) {
        if self.ends("y") && self.vowel_in_stem() {
            let i = self.end - 1;
            self.b[i] = b'i';
        }
    }

    /// Replaces the first listed suffix present, if the stem has `m() > 0`.
    fn map_suffixes(&mut self, table: &[(&str, &str)]) {
        for (suffix, repl) in table {
            if self.ends(suffix) {
                self.replace_if_measure(repl);
                return;
            }
        }
    }

    fn step2(&mut self) {
        const TABLE: &[(&str, &str)] = &[
            ("ational", "ate"),
            ("tional", "tion"),
            ("enci", "ence"),
            ("anci", "ance"),
            ("izer", "ize"),
            ("bli", "ble"),
            ("alli", "al"),
            ("entli", "ent"),
            ("eli", "e"),
            ("ousli", "ous"),
            ("ization", "ize"),
            ("ation", "ate"),
            ("ator", "ate"),
            ("alism", "al"),
            ("iveness", "ive"),
            ("fulness", "ful"),
            ("ousness", "ous"),
            ("aliti", "al"),
            ("iviti", "ive"),
            ("biliti", "ble"),
            ("logi", "log"),
        ];
        self.map_suffixes(TABLE);
    }

    fn step3(&mut self) {
        const TABLE: &[(&str, &str)] = &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ];
        self.map_suffixes(TABLE);
    }

    fn step4(&mut self) {
        const SUFFIXES: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion",
            "ou", "ism", "ate", "iti", "ous", "ive", "ize",
        ];
        for suffix in SUFFIXES {
            if self.ends(suffix) {
                if *suffix == "ion" && !(self.j >= 1 && matches!(self.b[self.j - 1], b's' | b't')) {
                    return;
                }
                if self.m() > 1 {
                    self.end = self.j;
                }
                return;
            }
        }
    }

    fn step5(&mut self) {
        self.j = self.end;
        if self.last() == b'e' {
            let a = self.m();
            if a > 1 || (a == 1 && !self.cvc(self.end - 2)) {
                self.end -= 1;
            }
        }
        if self.last() == b'l' && self.double_cons(self.end - 1) && self.m() > 1 {
            self.end -= 1;
        }
    }
}

pub fn stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|c| c.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut w = Word {
        b: word.as_bytes().to_vec(),
        end: word.len(),
        j: 0,
    };
    w.step1ab();
    if w.end > 1 {
        w.step1c();
        w.step2();
        w.step3();
        w.step4();
        w.step5();
    }
    String::from_utf8(w.b[..w.end].to_vec()).expect("ascii")
}
