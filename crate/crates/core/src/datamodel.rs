//! Dataset schema, TSV loading/writing and the power-law synthetic generator.
//!
//! A [`Dataset`] holds aggregated listening events plus the item and user
//! catalogs they point into. Events are kept in canonical
//! `(user_id, timestamp, item_id, playcount)` order so that every seeded
//! procedure downstream depends only on dataset content, never on the order
//! rows appeared in the input files.

use std::borrow::Borrow;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

opaque_id!(
    /// Opaque user identifier.
    UserId
);
opaque_id!(
    /// Opaque item (track) identifier.
    ItemId
);

/// One aggregated listening record: `playcount` listens of `item_id` by
/// `user_id` at `timestamp`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub timestamp: u64,
    pub playcount: u32,
}

impl InteractionEvent {
    pub fn new(user_id: impl Into<UserId>, item_id: impl Into<ItemId>, timestamp: u64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
            playcount: 1,
        }
    }

    pub fn with_playcount(mut self, playcount: u32) -> Self {
        self.playcount = playcount;
        self
    }

    fn canonical_key(&self) -> (&UserId, u64, &ItemId, u32) {
        (&self.user_id, self.timestamp, &self.item_id, self.playcount)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub artist_id: String,
    pub album_id: Option<String>,
    pub track_name: String,
}

impl ItemRecord {
    pub fn new(item_id: impl Into<ItemId>, artist_id: impl Into<String>) -> Self {
        let item_id = item_id.into();
        Self {
            track_name: item_id.0.clone(),
            item_id,
            artist_id: artist_id.into(),
            album_id: None,
        }
    }
}

/// User metadata. Absent fields are `None` and serialize as empty strings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub country: Option<String>,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub total_playcount: u64,
}

impl UserRecord {
    pub fn new(user_id: impl Into<UserId>) -> Self {
        Self {
            user_id: user_id.into(),
            ..Default::default()
        }
    }

    pub fn with_country(mut self, country: impl Into<String>) -> Self {
        self.country = Some(country.into());
        self
    }
}

/// Validated, immutable interaction log with its catalogs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    events: Vec<InteractionEvent>,
    items: BTreeMap<ItemId, ItemRecord>,
    users: BTreeMap<UserId, UserRecord>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate catalog ids, dangling event
    /// references and invalid field values, then applies the canonical sort.
    pub fn from_parts(
        mut events: Vec<InteractionEvent>,
        items: Vec<ItemRecord>,
        users: Vec<UserRecord>,
    ) -> Result<Self> {
        let mut item_map = BTreeMap::new();
        for item in items {
            if item.artist_id.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "item {:?} has an empty artist_id",
                    item.item_id.0
                )));
            }
            match item_map.entry(item.item_id.clone()) {
                Entry::Occupied(_) => {
                    return Err(Error::DuplicateId {
                        kind: "item",
                        id: item.item_id.0,
                    })
                }
                Entry::Vacant(slot) => {
                    slot.insert(item);
                }
            }
        }
        let mut user_map = BTreeMap::new();
        for user in users {
            match user_map.entry(user.user_id.clone()) {
                Entry::Occupied(_) => {
                    return Err(Error::DuplicateId {
                        kind: "user",
                        id: user.user_id.0,
                    })
                }
                Entry::Vacant(slot) => {
                    slot.insert(user);
                }
            }
        }
        for event in &events {
            if event.playcount == 0 {
                return Err(Error::InvalidParameter(format!(
                    "event for user {:?} / item {:?} has playcount 0",
                    event.user_id.0, event.item_id.0
                )));
            }
            if !user_map.contains_key(&event.user_id) {
                return Err(Error::DanglingReference {
                    kind: "user",
                    id: event.user_id.0.clone(),
                });
            }
            if !item_map.contains_key(&event.item_id) {
                return Err(Error::DanglingReference {
                    kind: "item",
                    id: event.item_id.0.clone(),
                });
            }
        }
        events.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
        Ok(Self {
            events,
            items: item_map,
            users: user_map,
        })
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn items(&self) -> &BTreeMap<ItemId, ItemRecord> {
        &self.items
    }

    pub fn users(&self) -> &BTreeMap<UserId, UserRecord> {
        &self.users
    }

    pub fn item(&self, id: &ItemId) -> Option<&ItemRecord> {
        self.items.get(id)
    }

    pub fn user(&self, id: &UserId) -> Option<&UserRecord> {
        self.users.get(id)
    }

    /// SHA-256 over the canonical TSV serialization of all three tables.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        write_events(&mut buf, &self.events).expect("writing to a Vec cannot fail");
        write_items(&mut buf, self.items.values()).expect("writing to a Vec cannot fail");
        write_users(&mut buf, self.users.values()).expect("writing to a Vec cannot fail");
        hasher.update(&buf);
        hex::encode(hasher.finalize())
    }

    /// Writes `events.tsv`, `items.tsv` and `users.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let paths = DatasetPaths::in_dir(dir);
        write_file(&paths.events, |w| write_events(w, &self.events))?;
        write_file(&paths.items, |w| write_items(w, self.items.values()))?;
        write_file(&paths.users, |w| write_users(w, self.users.values()))?;
        Ok(())
    }
}

/// Locations of the three dataset tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub events: std::path::PathBuf,
    pub items: std::path::PathBuf,
    pub users: std::path::PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            events: dir.join("events.tsv"),
            items: dir.join("items.tsv"),
            users: dir.join("users.tsv"),
        }
    }
}

pub const EVENTS_HEADER: [&str; 4] = ["user_id", "item_id", "timestamp", "playcount"];
pub const ITEMS_HEADER: [&str; 4] = ["item_id", "artist_id", "album_id", "track_name"];
pub const USERS_HEADER: [&str; 5] = ["user_id", "country", "age", "gender", "total_playcount"];

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_events<'a>(
    w: &mut dyn Write,
    events: impl IntoIterator<Item = &'a InteractionEvent>,
) -> std::io::Result<()> {
    writeln!(w, "{}", EVENTS_HEADER.join("\t"))?;
    for e in events {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.user_id, e.item_id, e.timestamp, e.playcount
        )?;
    }
    Ok(())
}

pub fn write_items<'a>(
    w: &mut dyn Write,
    items: impl IntoIterator<Item = &'a ItemRecord>,
) -> std::io::Result<()> {
    writeln!(w, "{}", ITEMS_HEADER.join("\t"))?;
    for i in items {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            i.item_id,
            i.artist_id,
            i.album_id.as_deref().unwrap_or(""),
            i.track_name
        )?;
    }
    Ok(())
}

pub fn write_users<'a>(
    w: &mut dyn Write,
    users: impl IntoIterator<Item = &'a UserRecord>,
) -> std::io::Result<()> {
    writeln!(w, "{}", USERS_HEADER.join("\t"))?;
    for u in users {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            u.user_id,
            u.country.as_deref().unwrap_or(""),
            u.age.map(|a| a.to_string()).unwrap_or_default(),
            u.gender.as_deref().unwrap_or(""),
            u.total_playcount
        )?;
    }
    Ok(())
}

/// Reads a headered, tab-separated file and hands every data row (with its
/// 1-based line number) to `row`.
fn read_tsv(
    path: &Path,
    header: &[&str],
    mut row: impl FnMut(usize, &[&str]) -> std::result::Result<(), String>,
) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let malformed = |line: usize, reason: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(format!("reading {}", path.display()), e))?,
        None => return Err(malformed(1, "missing header row".into())),
    };
    let got: Vec<&str> = first.trim_end_matches('\r').split('\t').collect();
    if got != header {
        return Err(malformed(
            1,
            format!("expected header {:?}, found {:?}", header.join("\t"), first),
        ));
    }
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(malformed(
                lineno,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        row(lineno, &fields).map_err(|reason| malformed(lineno, reason))?;
    }
    Ok(())
}

fn non_empty<'a>(field: &'a str, name: &str) -> std::result::Result<&'a str, String> {
    if field.is_empty() {
        Err(format!("{name} is empty"))
    } else {
        Ok(field)
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, name: &str) -> std::result::Result<T, String> {
    field
        .parse()
        .map_err(|_| format!("{name} {field:?} is not a valid non-negative integer"))
}

fn optional(field: &str) -> Option<String> {
    (!field.is_empty()).then(|| field.to_owned())
}

pub fn read_events(path: &Path) -> Result<Vec<InteractionEvent>> {
    let mut events = Vec::new();
    read_tsv(path, &EVENTS_HEADER, |_, f| {
        let playcount: u32 = parse_num(f[3], "playcount")?;
        if playcount == 0 {
            return Err("playcount must be at least 1".into());
        }
        events.push(InteractionEvent {
            user_id: non_empty(f[0], "user_id")?.into(),
            item_id: non_empty(f[1], "item_id")?.into(),
            timestamp: parse_num(f[2], "timestamp")?,
            playcount,
        });
        Ok(())
    })?;
    Ok(events)
}

pub fn read_items(path: &Path) -> Result<Vec<ItemRecord>> {
    let mut items = Vec::new();
    read_tsv(path, &ITEMS_HEADER, |_, f| {
        items.push(ItemRecord {
            item_id: non_empty(f[0], "item_id")?.into(),
            artist_id: non_empty(f[1], "artist_id")?.to_owned(),
            album_id: optional(f[2]),
            track_name: f[3].to_owned(),
        });
        Ok(())
    })?;
    Ok(items)
}

pub fn read_users(path: &Path) -> Result<Vec<UserRecord>> {
    let mut users = Vec::new();
    read_tsv(path, &USERS_HEADER, |_, f| {
        users.push(UserRecord {
            user_id: non_empty(f[0], "user_id")?.into(),
            country: optional(f[1]),
            age: if f[2].is_empty() {
                None
            } else {
                Some(parse_num(f[2], "age")?)
            },
            gender: optional(f[3]),
            total_playcount: parse_num(f[4], "total_playcount")?,
        });
        Ok(())
    })?;
    Ok(users)
}

/// Loads and validates the three TSV tables.
pub fn load_dataset(events_path: &Path, items_path: &Path, users_path: &Path) -> Result<Dataset> {
    let items = read_items(items_path)?;
    let users = read_users(users_path)?;
    let events = read_events(events_path)?;
    Dataset::from_parts(events, items, users)
}

/// Parameters of [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_events: usize,
    pub zipf_exponent: f64,
    pub n_artists: usize,
    pub countries: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 1000,
            n_items: 500,
            n_events: 50_000,
            zipf_exponent: 1.1,
            n_artists: 100,
            countries: ["US", "UK", "DE", "JP", "BR", "SE"]
                .iter()
                .map(|c| c.to_string())
                .collect(),
            seed: 42,
        }
    }
}

/// Unnormalized Zipf weights `1 / r^s` for ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

fn padded(prefix: &str, idx: usize, count: usize) -> String {
    let width = count.to_string().len();
    format!("{prefix}{idx:0width$}")
}

/// Synthetic item id for popularity rank `rank` (1-based) out of `n_items`.
/// Zero padding makes lexicographic order match rank order.
pub fn synthetic_item_id(rank: usize, n_items: usize) -> ItemId {
    ItemId(padded("t", rank, n_items))
}

const GENDERS: [&str; 4] = ["f", "m", "n", ""];
const BASE_TIMESTAMP: u64 = 1_356_998_400;

/// Generates a listening log whose item popularity follows a Zipf law over
/// item ranks. Item `t…1` is the rank-1 (most likely) item.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let invalid = |msg: &str| Err(Error::InvalidParameter(msg.to_owned()));
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_events == 0 || cfg.n_artists == 0 {
        return invalid("n_users, n_items, n_events and n_artists must be positive");
    }
    if !(cfg.zipf_exponent.is_finite() && cfg.zipf_exponent > 0.0) {
        return invalid("zipf_exponent must be a positive real");
    }
    if cfg.n_artists > cfg.n_items {
        return invalid("n_artists must not exceed n_items");
    }
    if cfg.countries.is_empty() || cfg.countries.iter().any(|c| c.is_empty()) {
        return invalid("countries must be a non-empty list of non-empty codes");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let items: Vec<ItemRecord> = (1..=cfg.n_items)
        .map(|rank| {
            let artist = rng.gen_range(0..cfg.n_artists);
            let album = rng.gen_range(0..3);
            let artist_id = padded("a", artist, cfg.n_artists);
            ItemRecord {
                item_id: synthetic_item_id(rank, cfg.n_items),
                album_id: Some(format!("{artist_id}-al{album}")),
                artist_id,
                track_name: format!("Track {rank}"),
            }
        })
        .collect();

    let mut users: Vec<UserRecord> = (0..cfg.n_users)
        .map(|idx| {
            let country = cfg.countries[rng.gen_range(0..cfg.countries.len())].clone();
            let age = rng.gen_bool(0.9).then(|| rng.gen_range(16..=70));
            let gender = GENDERS[rng.gen_range(0..GENDERS.len())];
            UserRecord {
                user_id: UserId(padded("u", idx, cfg.n_users)),
                country: Some(country),
                age,
                gender: optional(gender),
                total_playcount: 0,
            }
        })
        .collect();

    let popularity = WeightedIndex::new(zipf_weights(cfg.n_items, cfg.zipf_exponent))
        .map_err(|e| Error::InvalidParameter(format!("zipf weights: {e}")))?;
    let mut clock: Vec<u64> = (0..cfg.n_users)
        .map(|_| BASE_TIMESTAMP + rng.gen_range(0..86_400))
        .collect();
    let mut events = Vec::with_capacity(cfg.n_events);
    for _ in 0..cfg.n_events {
        let user = rng.gen_range(0..cfg.n_users);
        let item = popularity.sample(&mut rng);
        let playcount = rng.gen_range(1..=4u32);
        clock[user] += rng.gen_range(1..=3_600);
        users[user].total_playcount += u64::from(playcount);
        events.push(InteractionEvent {
            user_id: users[user].user_id.clone(),
            item_id: items[item].item_id.clone(),
            timestamp: clock[user],
            playcount,
        });
    }

    Dataset::from_parts(events, items, users)
}
