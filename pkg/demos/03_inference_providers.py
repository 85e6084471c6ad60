"""Prompting, completion parsing, fixtures, and the persistent cache.

Generation prompts follow a fixed Context/Event/Before layout; completions
come back as free text that is split into at most k before and k after
sentences. Providers are interchangeable: a fixture file, the synthetic
rule, or an external generation service (not exercised here).
"""

import tempfile
from pathlib import Path

from cscoref import (GenerationConfig, InferenceCache, format_prompt,
                     get_inferences, parse_completion)
from cscoref.synthgen import SyntheticProvider, SyntheticSpec, \
    generate_synthetic

context = ("Lindsay Lohan checks into rehab at Betty Ford Center , "
           "rehires longtime lawyer Shawn Holley")
print("finetuned-format prompt:")
print(format_prompt(context, "rehires"))

print("\nparsing a completion:")
completion = (" She fired her old lawyer. She needs counsel.\n"
              "After: He gets a good pay. END")
before, after = parse_completion(completion, k=5)
print(f"  before: {before}")
print(f"  after:  {after}")

print("\nsynthetic provider + cache:")
spec = SyntheticSpec(n_topics=1, clusters_per_topic=2,
                     mentions_per_cluster=2, hard_fraction=1.0, seed=7)
corpus, _ = generate_synthetic(spec)
provider = SyntheticProvider(spec)
config = GenerationConfig(k=3)

with tempfile.TemporaryDirectory() as tmp:
    cache = InferenceCache(Path(tmp) / "cache.jsonl")
    mention = corpus.mentions_in_order()[0]
    sentence = " ".join(corpus.sentence_of(mention))
    result = get_inferences(provider, mention, sentence, config, cache)
    print(f"  mention {mention.mention_id} ({mention.text!r}):")
    for s in result.before:
        print(f"    before: {s}")
    for s in result.after:
        print(f"    after:  {s}")
    print(f"  cache entries on disk: {len(cache)}")
    again = get_inferences(provider, mention, sentence, config, cache)
    print(f"  second call identical (served from cache): {again == result}")
