"""
Procedure recommendation from embeddings
========================================

Diseases and procedures share one embedding space.  Procedures closest
to an admission's diseases are recommended and scored against the
procedures actually recorded.
"""

import numpy as np

from dwl.corpus import generate_synthetic, split_corpus
from dwl.evaluation import knn_graph, recommend_procedures, topn_prf
from dwl.trainer import TrainConfig, train

corpus, _ = generate_synthetic(30, 4, 200, doc_length=40, concentration=0.05, seed=1)
result = train(corpus, TrainConfig(topics=4, learning_rate=50.0, batch_size=16, epochs=8, seed=0))
theta = result.model.theta
vocab = corpus.vocab
corpus = split_corpus(corpus, seed=0)

diseases = set(vocab.indices_of_kind("disease").tolist())
procedures = vocab.indices_of_kind("procedure")
lists, truths = [], []
for m in corpus.split("test"):
    present = np.flatnonzero(corpus.counts[:, m])
    d_idx = [n for n in present if n in diseases]
    truth = [n for n in present if vocab.kinds[n] == "procedure"]
    if d_idx and truth:
        lists.append(recommend_procedures(d_idx, theta, procedures, 3))
        truths.append(truth)

p, r, f1 = topn_prf(lists, truths)
print(f"top-3 over {len(lists)} admissions: precision {p:.3f} recall {r:.3f} F1 {f1:.3f}")
print("first admission:", [vocab.tokens[n] for n in lists[0]], "recorded:", [vocab.tokens[n] for n in truths[0]])

graph = knn_graph(theta, vocab.tokens, vocab.kinds, k=2)
for edge in graph["edges"][:6]:
    print(f"{edge['src']} -> {edge['dst']} ({edge['dist']})")
