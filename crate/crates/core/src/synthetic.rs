//! Seeded generator for small grid-layout corpora with templated commands.
//!
//! Every page is an invisible `body` holding invisible row `div`s; the
//! visible leaves are links, buttons, icons with a tooltip, and label/input
//! pairs. Commands come in four kinds:
//!
//! * copy-text: a verb plus the full text of a link or button;
//! * substring: a verb plus one word of a multi-word link or button;
//! * attribute-reference: a verb plus an icon's tooltip words;
//! * neighbor-label: "type in" plus the text of the label to the left of an
//!   input. The input itself carries no matching words, so only a model
//!   that looks at spatial neighbors can tell the inputs apart.
//!
//! Text words are drawn without replacement within a page, so lexical
//! overlap between a command and a non-target element only happens for
//! neighbor-label commands (where the label shares the words).

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_examples, CommandKind, Example, Split};
use crate::snapshot::{BBox, ElementRecord, PageSnapshot, Viewport};
use crate::text::{is_stopword, stem, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_pages: usize,
    /// Visible leaf elements per page; a label/input pair counts as two.
    pub elements_per_page: usize,
    pub commands_per_page: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_pages: 50,
            elements_per_page: 20,
            commands_per_page: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub pages: Vec<PageSnapshot>,
    pub examples: Vec<Example>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("{0} must be at least 1")]
    Size(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// File name of the dataset inside an output directory.
pub const DATASET_FILE: &str = "dataset.jsonl";
/// Directory of snapshot files inside an output directory.
pub const SNAPSHOT_DIR: &str = "snapshots";

const VIEWPORT: Viewport = Viewport {
    width: 1280.0,
    height: 800.0,
};
const COLUMNS: usize = 4;
const CELL_WIDTH: f64 = 260.0;
const CELL_HEIGHT: f64 = 28.0;
const COLUMN_GAP: f64 = 40.0;
const ROW_GAP: f64 = 24.0;
const MARGIN: f64 = 40.0;

/// Verbs and fillers used by command templates; kept out of element text.
const TEMPLATE_WORDS: &[&str] = &[
    "click", "open", "select", "press", "go", "to", "type", "in", "into", "the", "icon", "field",
    "link", "button", "btn", "nav", "item", "input", "text", "label", "form", "cell", "row", "page",
    "enter", "show", "value",
];

const VERBS: &[&str] = &["click", "open", "select", "press", "go to"];

const WORD_POOL: &[&str] = &[
    "account", "action", "address", "advice", "agency", "album", "animal", "answer", "apple",
    "archive", "area", "article", "artist", "audio", "author", "autumn", "award", "baby", "bakery",
    "balance", "banana", "band", "bank", "basket", "battery", "beach", "beauty", "bicycle", "bird",
    "birthday", "blanket", "blog", "board", "boat", "bonus", "book", "border", "bottle",
    "bread", "breakfast", "bridge", "brother", "budget", "bus", "business", "butter", "cabin",
    "cake", "calendar", "camera", "camp", "candle", "canvas", "captain", "car", "card", "career",
    "carpet", "castle", "catalog", "category", "ceiling", "chair", "channel", "chapter", "charity",
    "cheese", "chess", "chicken", "child", "chocolate", "church", "cinema", "circle", "city",
    "class", "climate", "clock", "cloud", "coach", "coffee", "collar", "college", "comedy",
    "comment", "company", "concert", "contact", "contest", "cookie", "copper", "corner", "cotton",
    "council", "country", "coupon", "course", "cousin", "credit", "culture", "customer", "dance",
    "database", "daughter", "deal", "debate", "degree", "delivery", "dentist", "desert", "desk",
    "dessert", "diamond", "diary", "dinner", "director", "discount", "doctor", "dollar", "donate",
    "door", "dragon", "drama", "dream", "dress", "driver", "eagle", "earth", "editor", "election",
    "element", "energy", "engine", "event", "exam", "expert", "fabric", "factory", "family",
    "farm", "fashion", "feather", "festival", "fiction", "film", "finance", "flight", "floor",
    "flower", "forest", "fortune", "forum", "fountain", "friend", "fruit", "furniture", "galaxy",
    "gallery", "game", "garden", "garlic", "gift", "glass", "glove", "gold", "golf", "grammar",
    "guitar", "hammer", "harbor", "health", "helmet", "history", "hobby", "holiday", "honey",
    "horse", "hospital", "hotel", "house", "hunter", "island", "jacket", "journal", "jungle",
    "kitchen", "ladder", "lake", "lamp", "language", "laptop", "lawyer", "leather", "lemon",
    "letter", "library", "lion", "lottery", "lunch", "magazine", "magnet", "market", "meadow",
    "medal", "medicine", "member", "memory", "menu", "message", "metal", "mirror", "monkey",
    "month", "motor", "mountain", "movie", "museum", "music", "napkin", "nature", "network",
    "novel", "ocean", "office", "olive", "orange", "orchestra", "oven", "owner", "painting",
    "palace", "paper", "parent", "park", "party", "passport", "pasta", "patient", "pencil",
    "pepper", "person", "phone", "photo", "piano", "picnic", "pillow", "pilot", "planet", "plant",
    "plastic", "player", "pocket", "poem", "police", "policy", "pond", "potato", "pottery",
    "poster", "prize", "product", "profile", "project", "promise", "puzzle", "queen", "question",
    "rabbit", "radio", "rain", "recipe", "record", "region", "report", "research", "resort",
    "review", "rice", "river", "robot", "rocket", "roof", "salad", "salmon", "sandwich", "school",
    "science", "screen", "season", "secret", "seminar", "shelter", "ship", "shirt", "shoe",
    "shop", "silver", "singer", "sister", "skate", "sketch", "soccer", "software", "soldier",
    "soup", "speaker", "sport", "spring", "stadium", "station", "statue", "storm", "student",
    "studio", "sugar", "summer", "sunset", "survey", "sweater", "table", "tailor", "teacher",
    "tennis", "theater", "ticket", "tiger", "timber", "tomato", "tourism", "tower", "toy",
    "tractor", "traffic", "train", "travel", "treasure", "tree", "tribe", "truck", "tunnel",
    "uncle", "union", "valley", "vehicle", "video", "village", "violin", "volcano", "voyage",
    "wagon", "wallet", "weather", "wedding", "whale", "window", "winter", "wizard", "wool",
    "worker", "yacht", "yoga", "zebra",
];

/// The generator's word list: lowercase, not a stop word, not a template
/// word, and no two words sharing a stem.
pub fn vocabulary() -> Vec<&'static str> {
    let mut stems = BTreeSet::new();
    for w in TEMPLATE_WORDS {
        stems.insert(stem(&Token::new(w).expect("template words are tokens")));
    }
    let mut out = Vec::new();
    for w in WORD_POOL {
        let t = Token::new(w).expect("pool words are tokens");
        if is_stopword(&t) {
            continue;
        }
        if stems.insert(stem(&t)) {
            out.push(*w);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Leaf {
    Link,
    Button,
    Icon,
    /// A label followed by the input it describes; occupies two cells.
    Pair,
}

/// Draws words without replacement, refilling from a fresh shuffle when the
/// pool runs dry.
struct WordDraw<'a> {
    vocab: &'a [&'static str],
    bag: Vec<&'static str>,
}

impl<'a> WordDraw<'a> {
    fn new(vocab: &'a [&'static str]) -> Self {
        Self { vocab, bag: Vec::new() }
    }

    fn take(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
        (0..n)
            .map(|_| {
                if self.bag.is_empty() {
                    self.bag = self.vocab.to_vec();
                    self.bag.shuffle(rng);
                }
                self.bag.pop().expect("refilled")
            })
            .collect()
    }
}

struct PageBuilder {
    elements: Vec<ElementRecord>,
    row_id: Option<String>,
    row: usize,
    col: usize,
    next_id: usize,
}

impl PageBuilder {
    fn new() -> Self {
        let body = ElementRecord {
            id: "body".into(),
            parent_id: None,
            tag: "body".into(),
            text: String::new(),
            attributes: Default::default(),
            bbox: BBox::new(0.0, 0.0, VIEWPORT.width, VIEWPORT.height),
            visible: false,
            is_leaf: false,
        };
        Self {
            elements: vec![body],
            row_id: None,
            row: 0,
            col: 0,
            next_id: 0,
        }
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("e{}", self.next_id)
    }

    fn row_top(&self) -> f64 {
        MARGIN + self.row as f64 * (CELL_HEIGHT + ROW_GAP)
    }

    /// Starts a new row when the current one cannot hold `cells` more cells.
    fn reserve(&mut self, cells: usize) {
        if self.row_id.is_some() && self.col + cells <= COLUMNS {
            return;
        }
        if self.row_id.is_some() {
            self.row += 1;
        }
        self.col = 0;
        let id = format!("row{}", self.row + 1);
        let top = self.row_top();
        self.elements.push(ElementRecord {
            id: id.clone(),
            parent_id: Some("body".into()),
            tag: "div".into(),
            text: String::new(),
            attributes: [("class".to_string(), "row".to_string())].into_iter().collect(),
            bbox: BBox::new(MARGIN, top, VIEWPORT.width - 2.0 * MARGIN, CELL_HEIGHT),
            visible: false,
            is_leaf: false,
        });
        self.row_id = Some(id);
    }

    fn skip_cell(&mut self) {
        self.col += 1;
    }

    fn place(&mut self, tag: &str, text: String, attributes: &[(&str, String)]) -> String {
        let id = self.fresh_id();
        let left = MARGIN + self.col as f64 * (CELL_WIDTH + COLUMN_GAP);
        self.elements.push(ElementRecord {
            id: id.clone(),
            parent_id: self.row_id.clone(),
            tag: tag.into(),
            text,
            attributes: attributes.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            bbox: BBox::new(left, self.row_top(), CELL_WIDTH, CELL_HEIGHT),
            visible: true,
            is_leaf: true,
        });
        self.col += 1;
        id
    }
}

struct Target {
    id: String,
    words: Vec<&'static str>,
}

#[derive(Default)]
struct Targets {
    texts: Vec<Target>,
    icons: Vec<Target>,
    inputs: Vec<Target>,
}

fn leaf_plan(rng: &mut ChaCha8Rng, elements: usize) -> Vec<Leaf> {
    let pairs = if elements >= 6 { (elements / 6).max(2) } else { elements / 4 };
    let mut remaining = elements - 2 * pairs;
    let mut plan = vec![Leaf::Pair; pairs];
    if remaining > 0 {
        plan.push(Leaf::Icon);
        remaining -= 1;
    }
    for _ in 0..remaining {
        plan.push(match rng.gen_range(0..10) {
            0..=4 => Leaf::Link,
            5..=7 => Leaf::Button,
            _ => Leaf::Icon,
        });
    }
    plan.shuffle(rng);
    plan
}

fn build_page(rng: &mut ChaCha8Rng, vocab: &[&'static str], page_no: usize, elements: usize) -> (PageSnapshot, Targets) {
    let mut words = WordDraw::new(vocab);
    let mut b = PageBuilder::new();
    let mut targets = Targets::default();
    for leaf in leaf_plan(rng, elements) {
        match leaf {
            Leaf::Link | Leaf::Button => {
                b.reserve(1);
                let n = rng.gen_range(1..=3);
                let w = words.take(rng, n);
                let text = capitalize(&w.join(" "));
                let serial = b.next_id + 1;
                let id = if leaf == Leaf::Link {
                    b.place("a", text, &[("class", "nav-item".into()), ("href", format!("/p{serial}"))])
                } else {
                    b.place("button", text, &[("class", "btn".into()), ("type", "button".into())])
                };
                targets.texts.push(Target { id, words: w });
            }
            Leaf::Icon => {
                b.reserve(1);
                let n = rng.gen_range(1..=2);
                let w = words.take(rng, n);
                let serial = b.next_id + 1;
                let id = b.place(
                    "img",
                    String::new(),
                    &[("tooltip", capitalize(&w.join(" "))), ("src", format!("/img/i{serial}.png"))],
                );
                targets.icons.push(Target { id, words: w });
            }
            Leaf::Pair => {
                if b.col % 2 == 1 && b.col + 1 < COLUMNS {
                    b.skip_cell();
                }
                b.reserve(2);
                let n = rng.gen_range(1..=2);
                let w = words.take(rng, n);
                b.place("label", capitalize(&w.join(" ")), &[]);
                let id = b.place("input", String::new(), &[("name", "value".into()), ("type", "text".into())]);
                targets.inputs.push(Target { id, words: w });
            }
        }
    }
    let page = PageSnapshot::from_parts(
        format!("synth-{page_no:04}"),
        format!("http://synthetic.example/{page_no}"),
        VIEWPORT,
        "body".into(),
        b.elements,
    )
    .expect("generated pages are well formed");
    (page, targets)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn command_for(rng: &mut ChaCha8Rng, kind: CommandKind, t: &Target) -> String {
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    match kind {
        CommandKind::CopyText => format!("{verb} {}", t.words.join(" ")),
        CommandKind::Substring => format!("{verb} {}", t.words[rng.gen_range(0..t.words.len())]),
        CommandKind::AttributeReference => format!("{verb} the {} icon", t.words.join(" ")),
        CommandKind::NeighborLabel => format!("type in {}", t.words.join(" ")),
    }
}

fn page_commands(rng: &mut ChaCha8Rng, page_no: usize, n: usize, targets: &Targets) -> Vec<(CommandKind, String, String)> {
    let multi_word: Vec<&Target> = targets.texts.iter().filter(|t| t.words.len() > 1).collect();
    let pool = |kind: CommandKind| -> Vec<&Target> {
        match kind {
            CommandKind::CopyText => targets.texts.iter().collect(),
            CommandKind::Substring => multi_word.clone(),
            CommandKind::AttributeReference => targets.icons.iter().collect(),
            CommandKind::NeighborLabel => targets.inputs.iter().collect(),
        }
    };
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let wanted = CommandKind::ALL[(j + page_no) % CommandKind::ALL.len()];
        let (kind, candidates) = CommandKind::ALL
            .iter()
            .cycle()
            .skip_while(|k| **k != wanted)
            .take(CommandKind::ALL.len())
            .map(|&k| (k, pool(k)))
            .find(|(_, c)| !c.is_empty())
            .expect("every page has at least one leaf");
        // Prefer targets not yet used for this kind on this page.
        let fresh: Vec<&Target> = candidates
            .iter()
            .copied()
            .filter(|t| !out.iter().any(|(k, _, id)| *k == kind && *id == t.id))
            .collect();
        let pick_from = if fresh.is_empty() { &candidates } else { &fresh };
        let t = pick_from[rng.gen_range(0..pick_from.len())];
        out.push((kind, command_for(rng, kind, t), t.id.clone()));
    }
    out
}

/// Splits pages 70/10/20 after a seeded shuffle; a single page is train.
fn assign_splits(rng: &mut ChaCha8Rng, n_pages: usize) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n_pages).collect();
    order.shuffle(rng);
    let n_train = ((n_pages as f64 * 0.7).round() as usize).max(1);
    let n_dev = ((n_pages as f64 * 0.1).round() as usize).min(n_pages - n_train);
    let mut splits = vec![Split::Test; n_pages];
    for (rank, &p) in order.iter().enumerate() {
        splits[p] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    splits
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus, SynthError> {
    if config.n_pages == 0 {
        return Err(SynthError::Size("n_pages"));
    }
    if config.elements_per_page == 0 {
        return Err(SynthError::Size("elements_per_page"));
    }
    if config.commands_per_page == 0 {
        return Err(SynthError::Size("commands_per_page"));
    }
    let vocab = vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let splits = assign_splits(&mut rng, config.n_pages);
    let mut pages = Vec::with_capacity(config.n_pages);
    let mut examples = Vec::new();
    for (page_no, split) in splits.into_iter().enumerate() {
        let (page, targets) = build_page(&mut rng, &vocab, page_no, config.elements_per_page);
        for (kind, command, target_id) in page_commands(&mut rng, page_no, config.commands_per_page, &targets) {
            examples.push(Example {
                page_id: page.page_id.clone(),
                command,
                target_id,
                split,
                kind: Some(kind),
            });
        }
        pages.push(page);
    }
    Ok(SyntheticCorpus { pages, examples })
}

impl SyntheticCorpus {
    /// Writes `snapshots/<page_id>.json` and `dataset.jsonl` under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        let snapshots = dir.join(SNAPSHOT_DIR);
        fs::create_dir_all(&snapshots)?;
        for page in &self.pages {
            fs::write(snapshots.join(format!("{}.json", page.page_id)), page.to_json())?;
        }
        let mut out = io::BufWriter::new(fs::File::create(dir.join(DATASET_FILE))?);
        write_examples(&mut out, &self.examples)?;
        out.flush()
    }
}
