from networkx.exception import NetworkXNoCycle


def find_cycle(G, source=None, orientation=None):
    if G.is_directed() and orientation is None:
        return _directed(G, source)
    for source in [source] if source is not None else list(G):
        parent_of = {source: None}
        stack = [(source, iter(G[source]))]
        visiting = {source}
        while stack:
            node, children = stack[-1]
            for child in children:
                if child == parent_of[node]:
                    continue
                if child in visiting:
                    return path_to(child, node, parent_of) + [(node, child)]
                parent_of[child] = node
                visiting.add(child)
                stack.append((child, iter(G[child])))
                break
            else:
                stack.pop()
    raise NetworkXNoCycle("No cycle found.")


def path_to(start, node, parent_of):
    path = []
    while node != start:
        path.append((parent_of[node], node))
        node = parent_of[node]
    return path[::-1]


def _directed(G, source):
    color = {}
    for root in [source] if source is not None else list(G):
        if root in color:
            continue
        parent_of = {root: None}
        stack = [(root, iter(G[root]))]
        color[root] = "grey"
        while stack:
            node, children = stack[-1]
            for child in children:
                if color.get(child) == "grey":
                    return path_to(child, node, parent_of) + [(node, child)]
                if child not in color:
                    color[child] = "grey"
                    parent_of[child] = node
                    stack.append((child, iter(G[child])))
                    break
            else:
                color[node] = "black"
                stack.pop()
    raise NetworkXNoCycle("No cycle found.")
