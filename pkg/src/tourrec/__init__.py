"""Tour-itinerary recommendation engine.

Pipeline: check-in ingestion -> masked-POI training corpus -> small
transformer encoder -> gated greedy itinerary construction under a time
budget, with bootstrap duration/photo statistics and comment-embedding
coherence feeding the gate.
"""

__version__ = "0.1.0"
