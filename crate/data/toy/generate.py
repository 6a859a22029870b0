#!/usr/bin/env python3
"""Generates the toy KB pair used by the tests.

Two KBs describe overlapping sets of people, movies and cities. KB1 uses
`y:` ids and YAGO-like names, KB2 uses `d:` ids and DBpedia-like names.
Inverse relationships are stated explicitly. Labels in KB2 are noisy copies
of KB1 labels, and each KB holds a few entities the other lacks.

Usage: python3 generate.py [--seed N] [--out DIR]
"""

import argparse
import json
import random
from pathlib import Path

FIRST = [
    "Joan", "Tim", "Karen", "Woody", "Maria", "Pedro", "Anna", "Lars", "Ines", "Omar",
    "Greta", "Hugo", "Lena", "Marco", "Nadia", "Oskar", "Paula", "Rafael", "Sofia", "Tomas",
    "Ulla", "Victor", "Wanda", "Yusuf", "Zora", "Bruno", "Clara", "Dario", "Elena", "Felix",
]
LAST = [
    "Allen", "Robbins", "Varga", "Lindqvist", "Okafor", "Moreau", "Tanaka", "Novak",
    "Haddad", "Brennan", "Kowalski", "Sandoval", "Petrov", "Achterberg", "Quintero",
    "Delacroix", "Mbeki", "Castellano", "Rasmussen", "Oyelaran",
]
TITLE_A = ["Silent", "Crimson", "Broken", "Hidden", "Frozen", "Golden", "Distant", "Hollow",
           "Burning", "Electric", "Paper", "Velvet", "Iron", "Glass", "Scarlet", "Wandering",
           "Midnight", "Savage", "Gentle", "Restless", "Bitter", "Lonely", "Secret", "Wild",
           "Quiet", "Lucky", "Endless", "Sudden", "Fallen", "Painted"]
TITLE_B = ["River", "Harbor", "Garden", "Empire", "Signal", "Cradle", "Player", "Orchard",
           "Lantern", "Meridian", "Compass", "Tide", "Quarry", "Summit", "Voyage", "Mirror",
           "Kingdom", "Frontier", "Carnival", "Letter", "Island", "Engine", "Shadow", "Canyon",
           "Bridge", "Station", "Forest", "Promise", "Verdict", "Harvest"]
CITY_A = ["Port", "Saint", "New", "North", "Lake", "Fort", "East", "Upper"]
CITY_B = ["Alder", "Brook", "Cedar", "Dunmore", "Elmstead", "Fairhaven", "Glenrock",
          "Harwick", "Ivydale", "Juniper", "Kingsford", "Larkspur", "Millbrae", "Norwood",
          "Oakhurst", "Pinecrest", "Quarryville", "Redmere"]
COUNTRIES = ["Avalon", "Borduria", "Carpania", "Dorvania", "Elbonia", "Freedonia"]

N_CITIES = 48
N_PEOPLE = 82
N_MOVIES = 80
ONLY_PER_KB = 10
EXACT_LABELS = 0.15


def make_world(rng):
    cities = []
    seen = set()
    while len(cities) < N_CITIES:
        name = f"{rng.choice(CITY_A)} {rng.choice(CITY_B)}"
        if name in seen:
            continue
        seen.add(name)
        cities.append({
            "name": name,
            "population": rng.randrange(5_000, 2_000_000),
            "country": rng.choice(COUNTRIES),
        })
    people = []
    seen = set()
    while len(people) < N_PEOPLE:
        name = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
        if name in seen:
            continue
        seen.add(name)
        people.append({
            "name": name,
            "birth": f"{rng.randrange(1930, 1995)}-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}",
            "city": rng.randrange(N_CITIES),
        })
    movies = []
    seen = set()
    while len(movies) < N_MOVIES:
        name = f"{rng.choice(TITLE_A)} {rng.choice(TITLE_B)}"
        if rng.random() < 0.3:
            name = "The " + name
        if name in seen:
            continue
        seen.add(name)
        cast = rng.sample(range(N_PEOPLE), rng.randrange(2, 5))
        director = rng.randrange(N_PEOPLE)
        movies.append({
            "name": name,
            "year": rng.randrange(1960, 2020),
            "runtime": rng.randrange(80, 180),
            "director": director,
            "cast": [p for p in cast if p != director],
            "city": rng.randrange(N_CITIES),
        })
    return cities, people, movies


def noisy_label(rng, label, kind):
    """A label variant that still shares tokens with the original."""
    tokens = label.split()
    r = rng.random()
    if kind == "person":
        first, last = tokens[0], tokens[-1]
        if r < 0.5:
            return f"{first[0]}. {last}"
        return f"{first} {rng.choice('ABCDEFGHJKLMNPRSTW')}. {last}"
    if kind == "movie":
        if tokens[0] == "The" and r < 0.5:
            return " ".join(tokens[1:])
        return f"{label} (film)"
    if r < 0.5:
        return f"{label} City"
    return f"{label}, {rng.choice(['Township', 'Borough', 'Village'])}"


class Kb:
    def __init__(self):
        self.attrs = set()
        self.rels = set()

    def attr(self, e, a, lit, kind):
        self.attrs.add((e, a, str(lit), kind))

    def rel(self, h, r, t):
        self.rels.add((h, r, t))

    def write(self, out, prefix):
        with open(out / f"{prefix}_attrs.tsv", "w", encoding="utf-8") as f:
            for t in sorted(self.attrs):
                f.write("\t".join(t) + "\n")
        with open(out / f"{prefix}_rels.tsv", "w", encoding="utf-8") as f:
            for t in sorted(self.rels):
                f.write("\t".join(t) + "\n")

    def counts(self):
        entities = {t[0] for t in self.attrs} | {t[0] for t in self.rels} | {t[2] for t in self.rels}
        return {
            "entities": len(entities),
            "attributes": len({t[1] for t in self.attrs}),
            "relationships": len({t[1] for t in self.rels}),
            "attr_triples": len(self.attrs),
            "rel_triples": len(self.rels),
        }


def slug(s):
    return "".join(c if c.isalnum() else "_" for c in s)


def build(seed):
    rng = random.Random(seed)
    cities, people, movies = make_world(rng)

    # Entities missing from one side.
    only1 = {("person", i) for i in rng.sample(range(N_PEOPLE), ONLY_PER_KB // 2)}
    only1 |= {("movie", i) for i in rng.sample(range(N_MOVIES), ONLY_PER_KB // 2)}
    rest = [("person", i) for i in range(N_PEOPLE)] + [("movie", i) for i in range(N_MOVIES)]
    only2 = set(rng.sample([e for e in rest if e not in only1], ONLY_PER_KB))

    def in_kb1(e):
        return e not in only2

    def in_kb2(e):
        return e not in only1

    ids1, ids2 = {}, {}
    for kind, items in (("city", cities), ("person", people), ("movie", movies)):
        for i, item in enumerate(items):
            ids1[(kind, i)] = f"y:{slug(item['name'])}"
            ids2[(kind, i)] = f"d:{kind[0]}{i:03d}"

    kb1, kb2 = Kb(), Kb()
    gold = []
    labels2 = {}
    for kind, items in (("city", cities), ("person", people), ("movie", movies)):
        for i, item in enumerate(items):
            e = (kind, i)
            r = rng.random()
            labels2[e] = item["name"] if r < EXACT_LABELS else noisy_label(rng, item["name"], kind)
            if in_kb1(e) and in_kb2(e):
                gold.append((ids1[e], ids2[e]))

    for i, c in enumerate(cities):
        e = ("city", i)
        kb1.attr(ids1[e], "label", c["name"], "string")
        kb1.attr(ids1[e], "hasNumberOfPeople", c["population"], "number")
        kb1.attr(ids1[e], "isLocatedIn", c["country"], "string")
        kb2.attr(ids2[e], "rdfs:label", labels2[e], "string")
        pop = c["population"] if rng.random() < 0.8 else int(c["population"] * rng.uniform(0.9, 1.1))
        kb2.attr(ids2[e], "populationTotal", pop, "number")
        kb2.attr(ids2[e], "country", c["country"], "string")

    for i, p in enumerate(people):
        e = ("person", i)
        city = ("city", p["city"])
        if in_kb1(e):
            kb1.attr(ids1[e], "label", p["name"], "string")
            kb1.attr(ids1[e], "wasBornOnDate", p["birth"], "date")
            kb1.rel(ids1[e], "wasBornIn", ids1[city])
            kb1.rel(ids1[city], "isBirthPlaceOf", ids1[e])
        if in_kb2(e):
            kb2.attr(ids2[e], "rdfs:label", labels2[e], "string")
            if rng.random() < 0.9:
                kb2.attr(ids2[e], "birthDate", p["birth"], "date")
            if rng.random() < 0.95:
                kb2.rel(ids2[e], "birthPlace", ids2[city])
                kb2.rel(ids2[city], "birthPlaceOf", ids2[e])

    for i, m in enumerate(movies):
        e = ("movie", i)
        city = ("city", m["city"])
        director = ("person", m["director"])
        cast = [("person", c) for c in m["cast"]]
        if in_kb1(e):
            kb1.attr(ids1[e], "label", m["name"], "string")
            kb1.attr(ids1[e], "wasCreatedOnDate", f"{m['year']}-01-01", "date")
            kb1.attr(ids1[e], "hasDuration", m["runtime"], "number")
            kb1.rel(ids1[e], "wasFilmedIn", ids1[city])
            if in_kb1(director):
                kb1.rel(ids1[director], "directed", ids1[e])
                kb1.rel(ids1[e], "wasDirectedBy", ids1[director])
            for c in cast:
                if in_kb1(c):
                    kb1.rel(ids1[c], "actedIn", ids1[e])
                    kb1.rel(ids1[e], "hasActor", ids1[c])
        if in_kb2(e):
            kb2.attr(ids2[e], "rdfs:label", labels2[e], "string")
            kb2.attr(ids2[e], "releaseDate", f"{m['year']}-01-01", "date")
            if rng.random() < 0.85:
                kb2.attr(ids2[e], "runtime", m["runtime"], "number")
            kb2.rel(ids2[e], "location", ids2[city])
            if in_kb2(director):
                kb2.rel(ids2[e], "director", ids2[director])
                kb2.rel(ids2[director], "directorOf", ids2[e])
            for c in cast:
                if in_kb2(c) and rng.random() < 0.95:
                    kb2.rel(ids2[e], "starring", ids2[c])
                    kb2.rel(ids2[c], "starringIn", ids2[e])
    return kb1, kb2, sorted(gold)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2019)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    kb1, kb2, gold = build(args.seed)
    kb1.write(args.out, "kb1")
    kb2.write(args.out, "kb2")
    with open(args.out / "gold.tsv", "w", encoding="utf-8") as f:
        for a, b in gold:
            f.write(f"{a}\t{b}\n")

    spot1 = "y:The_Crimson_Cradle" if any(t[0] == "y:The_Crimson_Cradle" for t in kb1.attrs) else sorted(kb1.attrs)[0][0]
    manifest = {
        "seed": args.seed,
        "kb1": kb1.counts(),
        "kb2": kb2.counts(),
        "gold": len(gold),
        "spot": {
            "kb": "kb1",
            "entity": spot1,
            "attributes": sorted([list(t[1:]) for t in kb1.attrs if t[0] == spot1]),
            "relationships": sorted([[t[1], t[2]] for t in kb1.rels if t[0] == spot1]),
        },
    }
    with open(args.out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
