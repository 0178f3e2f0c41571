#include <iostream>
int main(){ std::cout << "secvit cli placeholder\n"; return 0; }
